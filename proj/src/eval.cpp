#include "pdrec/eval.hpp"

#include <algorithm>
#include <cmath>

#include "pdrec/error.hpp"
#include "pdrec/rng.hpp"

namespace pdrec {

double ndcg_at_k(int rank, int k) {
  if (rank < 1) throw Error("ndcg_at_k: rank must be at least 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

int hr_at_k(int rank, int k) {
  if (rank < 1) throw Error("hr_at_k: rank must be at least 1");
  return rank <= k ? 1 : 0;
}

double auc_sampled(double positive, std::span<const double> negatives) {
  if (negatives.empty()) throw Error("auc_sampled: no negatives");
  double below = 0.0;
  for (double s : negatives) below += s < positive ? 1.0 : (s == positive ? 0.5 : 0.0);
  return below / static_cast<double>(negatives.size());
}

int target_rank(double target_score, ItemId target, std::span<const double> negative_scores,
                std::span<const ItemId> negative_items) {
  int rank = 1;
  for (std::size_t k = 0; k < negative_scores.size(); ++k) {
    const double s = negative_scores[k];
    if (s > target_score || (s == target_score && negative_items[k] < target)) ++rank;
  }
  return rank;
}

std::vector<ItemId> sample_eval_negatives(const SplitDataset& split, UserId user, int n, std::uint64_t seed) {
  const auto& hist = split.history.at(user);
  std::vector<ItemId> pool;
  pool.reserve(split.n_items - hist.size());
  for (ItemId i = 0, h = 0; i < split.n_items; ++i) {
    while (h < hist.size() && hist[h] < i) ++h;
    if (h < hist.size() && hist[h] == i) continue;
    pool.push_back(i);
  }
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(std::max(n, 0)), pool.size());
  Rng rng(derive_seed(seed, {stream_tag("eval-negatives"), user}));
  for (std::size_t k = 0; k < want; ++k) std::swap(pool[k], pool[k + uniform_index(rng, pool.size() - k)]);
  pool.resize(want);
  return pool;
}

Metrics evaluate(const Scorer& scorer, std::span<const EvalRow> rows, const SplitDataset& split,
                 const EvalProtocol& protocol) {
  if (rows.empty()) throw Error("evaluate: no evaluation rows");
  Metrics sums;
  for (int k : protocol.ks) {
    sums["N@" + std::to_string(k)] = 0.0;
    sums["HR@" + std::to_string(k)] = 0.0;
  }
  sums["AUC"] = 0.0;

  for (const auto& row : rows) {
    const auto negatives = sample_eval_negatives(split, row.user, protocol.n_negatives, protocol.seed);
    if (negatives.empty()) throw Error("evaluate: user " + std::to_string(row.user) + " has no negatives available");
    std::vector<ItemId> items{row.target};
    items.insert(items.end(), negatives.begin(), negatives.end());
    const auto scores = scorer(row.context, items);
    if (scores.size() != items.size()) throw Error("evaluate: scorer returned the wrong number of scores");
    const std::span<const double> neg_scores(scores.data() + 1, negatives.size());
    const int rank = target_rank(scores[0], row.target, neg_scores, negatives);
    for (int k : protocol.ks) {
      sums["N@" + std::to_string(k)] += ndcg_at_k(rank, k);
      sums["HR@" + std::to_string(k)] += hr_at_k(rank, k);
    }
    sums["AUC"] += auc_sampled(scores[0], neg_scores);
  }
  for (auto& [name, v] : sums) v /= static_cast<double>(rows.size());
  return sums;
}

Metrics MetricReport::mean() const {
  Metrics out;
  for (const auto& [seed, m] : runs)
    for (const auto& [name, v] : m) out[name] += v / static_cast<double>(runs.size());
  return out;
}

Metrics MetricReport::stddev() const {
  Metrics out;
  const Metrics mu = mean();
  for (const auto& [name, v] : mu) {
    double ss = 0.0;
    for (const auto& [seed, m] : runs) ss += (m.at(name) - v) * (m.at(name) - v);
    out[name] = runs.size() > 1 ? std::sqrt(ss / static_cast<double>(runs.size() - 1)) : 0.0;
  }
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& [seed, m] : runs) per_seed.push_back({{"seed", seed}, {"metrics", m}});
  return {{"config_hash", config_hash},
          {"protocol", {{"n_negatives", protocol.n_negatives}, {"ks", protocol.ks}, {"seed", protocol.seed}}},
          {"per_seed", per_seed},
          {"mean", mean()},
          {"std", stddev()}};
}

std::string MetricReport::dump() const { return to_json().dump(2) + "\n"; }

}  // namespace pdrec
