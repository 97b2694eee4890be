#pragma once

// Shared helpers for the test binaries: random instance generators and a
// central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "pdrec/autodiff.hpp"
#include "pdrec/data.hpp"
#include "pdrec/nn.hpp"
#include "pdrec/rng.hpp"

namespace pdrec::testing {

inline constexpr double kFdStep = 1e-5;
// Gradients smaller than this are compared absolutely.
inline constexpr double kFdFloor = 1e-6;

// Largest |analytic - numeric| / max(|analytic|, |numeric|, kFdFloor) over
// every entry of every parameter.
inline double max_gradient_error(ParamSet& params, const std::function<ad::Var(ad::Tape&)>& loss) {
  params.zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    ad::Tape tape(false);
    return loss(tape).scalar();
  };
  double worst = 0.0;
  for (auto& p : params.all()) {
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      double& x = p.value.data()[k];
      const double saved = x;
      x = saved + kFdStep;
      const double up = eval();
      x = saved - kFdStep;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * kFdStep);
      const double analytic = p.grad.data()[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

inline std::vector<double> random_scores(Rng& rng, std::size_t n, bool allow_ties) {
  std::vector<double> v(n);
  for (auto& x : v) x = allow_ties ? static_cast<double>(uniform_index(rng, 5)) / 4.0 : uniform01(rng);
  return v;
}

// Distinct sorted subset of [0, n) with size in [lo, hi].
inline std::vector<ItemId> random_subset(Rng& rng, std::size_t n, std::size_t lo, std::size_t hi) {
  std::vector<ItemId> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(all[i - 1], all[uniform_index(rng, i)]);
  const std::size_t k = lo + uniform_index(rng, hi - lo + 1);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

inline std::vector<ItemId> random_sequence(Rng& rng, std::size_t n_items, std::size_t len) {
  std::vector<ItemId> s(len);
  for (auto& x : s) x = static_cast<ItemId>(uniform_index(rng, n_items));
  return s;
}

// Random log where every user has between min_len and max_len records.
inline InteractionLog random_log(Rng& rng, std::size_t n_users, std::size_t n_items, std::size_t min_len,
                                 std::size_t max_len) {
  InteractionLog log;
  log.n_users = n_users;
  log.n_items = n_items;
  for (UserId u = 0; u < n_users; ++u) {
    const std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
    for (std::size_t j = 0; j < len; ++j)
      log.records.push_back({u, static_cast<ItemId>(uniform_index(rng, n_items)),
                             static_cast<Timestamp>(uniform_index(rng, 1000))});
  }
  return log;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pdrec-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace pdrec::testing
