#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pdrec/data.hpp"

namespace pdrec {

// A user's preference vector partitioned into observed (training) items and
// the rest of the corpus. Observed entries are in ascending item order.
struct SplitPreferences {
  std::vector<ItemId> observed_items;
  std::vector<double> observed;
  // 1 = highest observed score; ties go to the lower item id.
  std::vector<int> observed_ranks;
  std::vector<ItemId> unobserved_items;
  std::vector<double> unobserved;
};

SplitPreferences split_preferences(std::span<const double> preferences, std::span<const ItemId> positives);

struct HbrParams {
  double omega_r = 0.1;
  double c_w = 3.0;
  double omega_f = 2.0;
};

struct ReweightVector {
  std::vector<ItemId> items;
  std::vector<double> weights;

  double weight_of(ItemId item) const;
};

// Mixes min-max normalized observed preferences with their ranks, then caps
// at the effective truncation value and rescales:
//   w_hat = (1 - omega_r) * omega_s * minmax(o) + omega_r * (1 + max r - r) / max r
//   c_eff = min(max(c_w, min w_hat), max w_hat)
//   w     = omega_f * min(w_hat, c_eff)
// with omega_s = seq_len / sum(minmax(o)). Equal observed scores make the
// minmax term 0 and omega_s 1.
ReweightVector hbr_reweight(const SplitPreferences& sp, std::size_t seq_len, const HbrParams& params);

// Top-m unobserved items by preference, descending, ties by ascending id.
std::vector<ItemId> dpa_candidates(const SplitPreferences& sp, std::size_t m);

struct SoftPositives {
  std::vector<ItemId> items;
  std::vector<double> scores;
};

// Re-ranks candidates by h_u . emb(item) and keeps the top n.
SoftPositives dpa_select(std::span<const double> user_state, std::span<const ItemId> candidates,
                         const Eigen::MatrixXd& item_embeddings, std::size_t n);

// Uniform sampling restricted to the low-scored tail K_u[floor(omega_m l_u) : l_u]
// of the unobserved items ranked by descending preference.
class NnsDistribution {
 public:
  NnsDistribution(const SplitPreferences& sp, double omega_m);

  const std::vector<ItemId>& ranked() const { return ranked_; }
  std::size_t slice_begin() const { return begin_; }
  std::size_t slice_size() const { return ranked_.size() - begin_; }
  std::span<const ItemId> eligible() const { return std::span(ranked_).subspan(begin_); }
  double omega_m() const { return omega_m_; }

  double probability(ItemId item) const;
  // With replacement.
  std::vector<ItemId> sample(std::size_t count, std::uint64_t seed) const;

 private:
  std::vector<ItemId> ranked_;
  std::vector<std::uint8_t> in_slice_;
  std::size_t begin_ = 0;
  double omega_m_ = 0.0;
};

// Appends one JSON line describing a plugin decision.
void write_audit_line(std::ostream& out, UserId user, const std::string& kind, std::span<const ItemId> items,
                      std::span<const double> scores);

}  // namespace pdrec
