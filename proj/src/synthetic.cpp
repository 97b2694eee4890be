#include "pdrec/synthetic.hpp"

#include <algorithm>
#include <numeric>

#include "pdrec/error.hpp"
#include "pdrec/rng.hpp"

namespace pdrec {

PlantedData generate_planted(const PlantedConfig& config) {
  if (config.n_clusters < 2 || config.n_items < config.n_clusters || config.n_items % config.n_clusters != 0)
    throw Error("planted: n_items must be a multiple of n_clusters >= 2");
  if (config.min_len < 1 || config.min_len > config.max_len) throw Error("planted: bad length range");

  Rng rng(derive_seed(config.seed, {stream_tag("planted")}));
  const std::size_t per_cluster = config.n_items / config.n_clusters;

  std::vector<ItemId> perm(config.n_items);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  // ring[c][k] is the k-th item around cluster c.
  std::vector<std::vector<ItemId>> ring(config.n_clusters);
  PlantedData out;
  out.item_cluster.assign(config.n_items, 0);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    ring[k / per_cluster].push_back(perm[k]);
    out.item_cluster[perm[k]] = k / per_cluster;
  }

  out.log.n_users = config.n_users;
  out.log.n_items = config.n_items;
  for (UserId u = 0; u < config.n_users; ++u) {
    const std::size_t len = config.min_len + uniform_index(rng, config.max_len - config.min_len + 1);
    const std::size_t first = uniform_index(rng, config.n_clusters);
    const std::size_t second = (first + 1 + uniform_index(rng, config.n_clusters - 1)) % config.n_clusters;
    const double frac = config.switch_lo + (config.switch_hi - config.switch_lo) * uniform01(rng);
    const auto switch_at = static_cast<std::size_t>(frac * static_cast<double>(len));

    Timestamp t = static_cast<Timestamp>(uniform_index(rng, 1'000'000));
    std::size_t cluster = first;
    std::size_t pos = uniform_index(rng, per_cluster);
    for (std::size_t j = 0; j < len; ++j) {
      if (j == switch_at) {
        cluster = second;
        pos = uniform_index(rng, per_cluster);
      }
      t += 3600 + static_cast<Timestamp>(uniform_index(rng, 172'800));
      ItemId item;
      const bool noise = uniform01(rng) < config.noise_prob;
      if (noise) {
        item = static_cast<ItemId>(uniform_index(rng, config.n_items));
      } else {
        pos = (pos + 1 + uniform_index(rng, static_cast<std::uint64_t>(config.max_step))) % per_cluster;
        item = ring[cluster][pos];
      }
      out.log.records.push_back({u, item, t});
      out.is_noise.push_back(noise);
    }
    out.final_cluster.push_back(cluster);
  }
  return out;
}

}  // namespace pdrec
