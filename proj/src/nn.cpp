#include "pdrec/nn.hpp"

#include <cmath>

#include "pdrec/error.hpp"

namespace pdrec {

ParamSet::ParamSet(const ParamSet& other) : params_(other.params_) {}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  params_ = other.params_;
  return *this;
}

ad::Param& ParamSet::add(std::string name, ad::Matrix value) {
  if (contains(name)) throw Error("duplicate parameter " + name);
  params_.push_back(ad::Param{std::move(name), std::move(value), {}});
  params_.back().zero_grad();
  return params_.back();
}

ad::Param& ParamSet::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named " + name);
}

const ad::Param& ParamSet::at(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("no parameter named " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

bool ParamSet::all_finite() const {
  for (const auto& p : params_)
    if (!p.value.allFinite()) return false;
  return true;
}

void ParamSet::round_to_f32() {
  for (auto& p : params_)
    p.value = p.value.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

std::vector<NamedTensor> ParamSet::to_tensors() const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_) out.push_back({p.name, p.value});
  return out;
}

void ParamSet::load_tensors(const Checkpoint& ckpt) {
  for (auto& p : params_) {
    const auto& v = ckpt.tensor(p.name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw Error("checkpoint tensor " + p.name + " has the wrong shape");
    p.value = v;
  }
}

Adam::Adam(const ParamSet& params, AdamOptions options) : opt_(options) {
  for (const auto& p : params.all()) {
    m_.push_back(ad::Matrix::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(ad::Matrix::Zero(p.value.rows(), p.value.cols()));
  }
}

void Adam::step(ParamSet& params) {
  if (params.all().size() != m_.size()) throw Error("optimizer/parameter count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  for (auto& p : params.all()) {
    if (p.grad.size() == 0) p.zero_grad();
    m_[k] = opt_.beta1 * m_[k] + (1.0 - opt_.beta1) * p.grad;
    v_[k] = opt_.beta2 * v_[k] + (1.0 - opt_.beta2) * p.grad.cwiseAbs2();
    if (opt_.lr != 0.0) {
      p.value.array() -= opt_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + opt_.eps);
    }
    ++k;
  }
}

ad::Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Gaussian g;
  ad::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * g(rng);
  return m;
}

ad::Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  ad::Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = bound * (2.0 * uniform01(rng) - 1.0);
  return m;
}

}  // namespace pdrec
