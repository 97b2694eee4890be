#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdrec/data.hpp"

namespace pdrec {

struct EvalProtocol {
  int n_negatives = 99;
  std::vector<int> ks{1, 5, 10};
  std::uint64_t seed = 0;
};

double ndcg_at_k(int rank, int k);
int hr_at_k(int rank, int k);
// Fraction of negatives scored strictly below the positive, ties count half.
double auc_sampled(double positive, std::span<const double> negatives);
// 1-based rank of the target among itself and the negatives; equal scores
// rank the lower item id first.
int target_rank(double target_score, ItemId target, std::span<const double> negative_scores,
                std::span<const ItemId> negative_items);

// Uniform sample without replacement from items outside the user's entire
// history. Returns every available item when fewer than n exist.
std::vector<ItemId> sample_eval_negatives(const SplitDataset& split, UserId user, int n, std::uint64_t seed);

// Scores `items` for a user whose behavior so far is `context`.
using Scorer = std::function<std::vector<double>(std::span<const ItemId> context, std::span<const ItemId> items)>;

using Metrics = std::map<std::string, double>;

Metrics evaluate(const Scorer& scorer, std::span<const EvalRow> rows, const SplitDataset& split,
                 const EvalProtocol& protocol);

struct MetricReport {
  std::string config_hash;
  EvalProtocol protocol;
  std::vector<std::pair<std::uint64_t, Metrics>> runs;

  Metrics mean() const;
  Metrics stddev() const;
  nlohmann::json to_json() const;
  // Canonical serialization; byte-identical for identical runs.
  std::string dump() const;
};

}  // namespace pdrec
