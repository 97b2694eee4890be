#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace pdrec {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Derives an independent stream seed from a base seed and a list of tags.
// Every random decision in the pipeline draws from a stream derived this way,
// so enabling one component never shifts the samples drawn by another.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

// Stable 64-bit tag for a stream label.
std::uint64_t stream_tag(std::string_view label);

// Portable samplers: the standard distributions are implementation-defined,
// these produce identical streams on every platform.
double uniform01(Rng& rng);
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

class Gaussian {
 public:
  double operator()(Rng& rng);

 private:
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pdrec
