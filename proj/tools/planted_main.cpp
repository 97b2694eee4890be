// Writes a planted synthetic interaction log as TSV.
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pdrec/data.hpp"
#include "pdrec/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a planted sequential-recommendation log"};
  pdrec::PlantedConfig cfg;
  std::string out;
  app.add_option("--out", out, "output TSV path")->required();
  app.add_option("--seed", cfg.seed, "generator seed");
  app.add_option("--users", cfg.n_users);
  app.add_option("--items", cfg.n_items);
  app.add_option("--clusters", cfg.n_clusters);
  app.add_option("--min-len", cfg.min_len);
  app.add_option("--max-len", cfg.max_len);
  app.add_option("--noise", cfg.noise_prob, "probability of an off-interest behavior");
  CLI11_PARSE(app, argc, argv);
  try {
    pdrec::write_interactions(out, pdrec::generate_planted(cfg).log);
  } catch (const std::exception& e) {
    std::cerr << "pdrec-planted: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
