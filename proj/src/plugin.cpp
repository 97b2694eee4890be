#include "pdrec/plugin.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "pdrec/error.hpp"
#include "pdrec/rng.hpp"

namespace pdrec {

namespace {

// Indices of `scores` ordered by descending score, ties by ascending item id.
std::vector<std::size_t> rank_desc(std::span<const double> scores, std::span<const ItemId> items) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  return idx;
}

}  // namespace

SplitPreferences split_preferences(std::span<const double> preferences, std::span<const ItemId> positives) {
  if (positives.empty()) throw Error("split_preferences: user has no training positives");
  std::vector<std::uint8_t> is_pos(preferences.size(), 0);
  for (ItemId i : positives) {
    if (i >= preferences.size()) throw Error("split_preferences: positive item outside the corpus");
    is_pos[i] = 1;
  }
  SplitPreferences sp;
  for (ItemId i = 0; i < preferences.size(); ++i) {
    if (is_pos[i]) {
      sp.observed_items.push_back(i);
      sp.observed.push_back(preferences[i]);
    } else {
      sp.unobserved_items.push_back(i);
      sp.unobserved.push_back(preferences[i]);
    }
  }
  sp.observed_ranks.assign(sp.observed.size(), 0);
  const auto order = rank_desc(sp.observed, sp.observed_items);
  for (std::size_t r = 0; r < order.size(); ++r) sp.observed_ranks[order[r]] = static_cast<int>(r + 1);
  return sp;
}

double ReweightVector::weight_of(ItemId item) const {
  const auto it = std::lower_bound(items.begin(), items.end(), item);
  if (it == items.end() || *it != item) throw Error("no HBR weight for item " + std::to_string(item));
  return weights[static_cast<std::size_t>(it - items.begin())];
}

ReweightVector hbr_reweight(const SplitPreferences& sp, std::size_t seq_len, const HbrParams& params) {
  if (params.omega_r < 0.0 || params.omega_r > 1.0) throw Error("hbr_reweight: omega_r must be in [0, 1]");
  if (!(params.c_w > 0.0) || !(params.omega_f > 0.0)) throw Error("hbr_reweight: c_w and omega_f must be positive");
  const std::size_t k = sp.observed.size();
  if (k == 0) throw Error("hbr_reweight: no observed preferences");

  const auto [lo_it, hi_it] = std::minmax_element(sp.observed.begin(), sp.observed.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> minmax(k, 0.0);
  double omega_s = 1.0;
  if (hi > lo) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (minmax[j] = (sp.observed[j] - lo) / (hi - lo));
    omega_s = static_cast<double>(seq_len) / total;
  }
  const double max_rank = *std::max_element(sp.observed_ranks.begin(), sp.observed_ranks.end());

  std::vector<double> w_hat(k);
  for (std::size_t j = 0; j < k; ++j)
    w_hat[j] = (1.0 - params.omega_r) * omega_s * minmax[j] +
               params.omega_r * (1.0 + max_rank - sp.observed_ranks[j]) / max_rank;

  const auto [wlo, whi] = std::minmax_element(w_hat.begin(), w_hat.end());
  const double cap = std::min(std::max(params.c_w, *wlo), *whi);

  ReweightVector out{sp.observed_items, std::vector<double>(k)};
  for (std::size_t j = 0; j < k; ++j) out.weights[j] = params.omega_f * std::min(w_hat[j], cap);
  return out;
}

std::vector<ItemId> dpa_candidates(const SplitPreferences& sp, std::size_t m) {
  if (m < 1) throw Error("dpa_candidates: m must be at least 1");
  const auto order = rank_desc(sp.unobserved, sp.unobserved_items);
  std::vector<ItemId> out;
  for (std::size_t r = 0; r < std::min(m, order.size()); ++r) out.push_back(sp.unobserved_items[order[r]]);
  return out;
}

SoftPositives dpa_select(std::span<const double> user_state, std::span<const ItemId> candidates,
                         const Eigen::MatrixXd& item_embeddings, std::size_t n) {
  if (static_cast<Eigen::Index>(user_state.size()) != item_embeddings.cols())
    throw Error("dpa_select: user state and item embeddings differ in dimension");
  if (n > candidates.size()) throw Error("dpa_select: n exceeds the candidate count");
  const Eigen::Map<const Eigen::RowVectorXd> h(user_state.data(), static_cast<Eigen::Index>(user_state.size()));
  std::vector<double> scores;
  for (ItemId i : candidates) {
    if (static_cast<Eigen::Index>(i) >= item_embeddings.rows()) throw Error("dpa_select: candidate outside the corpus");
    scores.push_back(h.dot(item_embeddings.row(i)));
  }
  const auto order = rank_desc(scores, candidates);
  SoftPositives out;
  for (std::size_t r = 0; r < n; ++r) {
    out.items.push_back(candidates[order[r]]);
    out.scores.push_back(scores[order[r]]);
  }
  return out;
}

NnsDistribution::NnsDistribution(const SplitPreferences& sp, double omega_m) : omega_m_(omega_m) {
  if (omega_m < 0.0 || omega_m >= 1.0) throw Error("nns: omega_m must be in [0, 1)");
  const std::size_t l = sp.unobserved.size();
  if (l == 0) throw Error("nns: user has no unobserved items");
  for (std::size_t r : rank_desc(sp.unobserved, sp.unobserved_items)) ranked_.push_back(sp.unobserved_items[r]);
  // The epsilon keeps products such as 0.7 * 10 from flooring to 6.
  begin_ = static_cast<std::size_t>(std::floor(omega_m * static_cast<double>(l) + 1e-9));
  if (begin_ >= l) throw Error("nns: eligible slice is empty");
  const ItemId max_item = *std::max_element(ranked_.begin(), ranked_.end());
  in_slice_.assign(static_cast<std::size_t>(max_item) + 1, 0);
  for (std::size_t r = begin_; r < l; ++r) in_slice_[ranked_[r]] = 1;
}

double NnsDistribution::probability(ItemId item) const {
  if (item >= in_slice_.size() || !in_slice_[item]) return 0.0;
  return 1.0 / static_cast<double>(slice_size());
}

std::vector<ItemId> NnsDistribution::sample(std::size_t count, std::uint64_t seed) const {
  Rng rng(seed);
  std::vector<ItemId> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(ranked_[begin_ + uniform_index(rng, slice_size())]);
  return out;
}

void write_audit_line(std::ostream& out, UserId user, const std::string& kind, std::span<const ItemId> items,
                      std::span<const double> scores) {
  nlohmann::json j = {{"user", user},
                      {"kind", kind},
                      {"items", std::vector<ItemId>(items.begin(), items.end())},
                      {"scores", std::vector<double>(scores.begin(), scores.end())}};
  out << j.dump() << '\n';
}

}  // namespace pdrec
