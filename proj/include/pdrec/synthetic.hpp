#pragma once

#include <cstdint>
#include <vector>

#include "pdrec/data.hpp"

namespace pdrec {

// Planted sequential data: items fall into clusters, each laid out on a ring.
// A user walks forward along one cluster's ring, switches to a second
// cluster partway through (interest drift), and occasionally emits a random
// off-interest item (noise).
struct PlantedConfig {
  std::size_t n_users = 200;
  std::size_t n_items = 500;
  std::size_t n_clusters = 5;
  std::size_t min_len = 12;
  std::size_t max_len = 30;
  // Drift point as a fraction of the sequence length.
  double switch_lo = 0.3;
  double switch_hi = 0.6;
  double noise_prob = 0.1;
  int max_step = 3;
  std::uint64_t seed = 0;
};

struct PlantedData {
  InteractionLog log;
  std::vector<std::size_t> item_cluster;
  // Cluster each user is in at the end of the sequence.
  std::vector<std::size_t> final_cluster;
  // Per record: true when the behavior was drawn as noise.
  std::vector<bool> is_noise;
};

PlantedData generate_planted(const PlantedConfig& config);

}  // namespace pdrec
