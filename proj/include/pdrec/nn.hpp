#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "pdrec/autodiff.hpp"
#include "pdrec/binary_io.hpp"
#include "pdrec/rng.hpp"

namespace pdrec {

// Named parameters with stable addresses (tapes hold pointers into it).
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  ad::Param& add(std::string name, ad::Matrix value);
  ad::Param& at(const std::string& name);
  const ad::Param& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::deque<ad::Param>& all() { return params_; }
  const std::deque<ad::Param>& all() const { return params_; }

  std::size_t parameter_count() const;
  void zero_grad();
  bool all_finite() const;
  // Rounds every value to the nearest f32, so in-memory models equal their
  // reloaded checkpoints exactly.
  void round_to_f32();

  std::vector<NamedTensor> to_tensors() const;
  // Shapes must match the existing parameters.
  void load_tensors(const Checkpoint& ckpt);

 private:
  std::deque<ad::Param> params_;
};

struct AdamOptions {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const ParamSet& params, AdamOptions options);
  // Applies one update from the accumulated grads; params with no grad are
  // treated as zero-gradient.
  void step(ParamSet& params);
  long steps_taken() const { return t_; }

 private:
  AdamOptions opt_;
  long t_ = 0;
  std::vector<ad::Matrix> m_, v_;
};

ad::Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);
ad::Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

}  // namespace pdrec
