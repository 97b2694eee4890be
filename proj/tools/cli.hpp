#pragma once

#include <iosfwd>

namespace pdrec {

// Entry point of the `pdrec` command. Returns the process exit code; errors
// are reported on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pdrec
