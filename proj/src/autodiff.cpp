#include "pdrec/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace pdrec::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, false, nullptr, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(Param& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  nodes_.push_back(Node{{}, &p.value, {}, record_, record_ ? &p : nullptr, {}});
  const int id = static_cast<int>(nodes_.size() - 1);
  bound_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  const bool keep = record_ && requires_grad;
  nodes_.push_back(Node{std::move(value), nullptr, {}, keep, nullptr, keep ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad.setZero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!record_) throw std::logic_error("backward on an inference tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward needs a scalar loss");
  grad(loss.id()).setConstant(1.0);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.size() == 0) continue;
    if (n.param->grad.size() == 0) n.param->zero_grad();
    n.param->grad += n.grad;
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars)
    if (v.tape()->requires_grad(v.id())) return true;
  return false;
}

void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("vars from different tapes");
}

void check_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch in ") + op);
}

}  // namespace

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) -= g;
  });
}

Var hadamard(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push(a.value() * s, any_grad({a}), [ia, s](Tape& t, int self) {
    t.grad(ia) += t.grad(self) * s;
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.rows(), "matmul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() * b.value(), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.cols() == b.cols(), "matmul_nt");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() * b.value().transpose(), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad(ib).noalias() += g.transpose() * t.value(ia);
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  check_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->push(std::move(out), any_grad({a, row}), [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ir)) t.grad(ir) += g.colwise().sum();
  });
}

Var tanh(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().tanh().matrix(), any_grad({a}), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(ia).array() += t.grad(self).array() * (1.0 - y.array().square());
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  Matrix y = a.value().unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return a.tape()->push(std::move(y), any_grad({a}), [ia](Tape& t, int self) {
    const Matrix& s = t.value(self);
    t.grad(ia).array() += t.grad(self).array() * s.array() * (1.0 - s.array());
  });
}

Var relu(Var a) {
  const int ia = a.id();
  return a.tape()->push(a.value().cwiseMax(0.0), any_grad({a}), [ia](Tape& t, int self) {
    const Matrix& x = t.value(ia);
    t.grad(ia).array() += (x.array() > 0.0).select(t.grad(self).array(), 0.0);
  });
}

Var one_minus(Var a) {
  const int ia = a.id();
  return a.tape()->push((1.0 - a.value().array()).matrix(), any_grad({a}), [ia](Tape& t, int self) {
    t.grad(ia) -= t.grad(self);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  check_same_tape(x, gain);
  check_same_tape(x, bias);
  const Eigen::Index n = x.cols();
  check_shape(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n, "layer_norm");
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std[r];
  }
  Matrix y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  const int ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape()->push(std::move(y), any_grad({x, gain, bias}),
                        [ix, ig, ib, xhat, inv_std](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
    if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
    if (t.requires_grad(ix)) {
      Matrix dxhat = g;
      dxhat.array().rowwise() *= t.value(ig).row(0).array();
      Matrix& gx = t.grad(ix);
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
        gx.row(r).array() += inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
      }
    }
  });
}

Var causal_softmax(Var scores) {
  const Matrix& s = scores.value();
  check_shape(s.rows() <= s.cols(), "causal_softmax");
  Matrix p = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto visible = s.row(i).head(i + 1);
    const double mx = visible.maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) z += (p(i, j) = std::exp(s(i, j) - mx));
    p.row(i).head(i + 1) /= z;
  }
  const int is = scores.id();
  return scores.tape()->push(std::move(p), any_grad({scores}), [is](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& p = t.value(self);
    Matrix& gs = t.grad(is);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const double dot = p.row(i).dot(g.row(i));
      gs.row(i).array() += p.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

Var gather_rows(Var table, std::span<const int> rows) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), tv.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= tv.rows()) throw std::out_of_range("gather_rows index");
    out.row(static_cast<Eigen::Index>(k)) = tv.row(rows[k]);
  }
  const int it = table.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return table.tape()->push(std::move(out), any_grad({table}), [it, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad(it);
    for (std::size_t k = 0; k < idx.size(); ++k) gt.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
  const int ia = a.id();
  return a.tape()->push(a.value().middleRows(start, count), any_grad({a}), [ia, start, count](Tape& t, int self) {
    t.grad(ia).middleRows(start, count) += t.grad(self);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  check_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  const int ia = a.id();
  return a.tape()->push(a.value().middleCols(start, count), any_grad({a}), [ia, start, count](Tape& t, int self) {
    t.grad(ia).middleCols(start, count) += t.grad(self);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  Eigen::Index cols = 0;
  bool needs = false;
  for (const Var& v : parts) {
    check_same_tape(parts.front(), v);
    check_shape(v.rows() == parts.front().rows(), "concat_cols");
    cols += v.cols();
    needs = needs || v.tape()->requires_grad(v.id());
  }
  Matrix out(parts.front().rows(), cols);
  std::vector<std::pair<int, Eigen::Index>> pieces;
  Eigen::Index at = 0;
  for (const Var& v : parts) {
    out.middleCols(at, v.cols()) = v.value();
    pieces.emplace_back(v.id(), at);
    at += v.cols();
  }
  return parts.front().tape()->push(std::move(out), needs, [pieces](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (auto [id, offset] : pieces)
      if (t.requires_grad(id)) t.grad(id) += g.middleCols(offset, t.value(id).cols());
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Eigen::Index rows = 0;
  bool needs = false;
  for (const Var& v : parts) {
    check_same_tape(parts.front(), v);
    check_shape(v.cols() == parts.front().cols(), "concat_rows");
    rows += v.rows();
    needs = needs || v.tape()->requires_grad(v.id());
  }
  Matrix out(rows, parts.front().cols());
  std::vector<std::pair<int, Eigen::Index>> pieces;
  Eigen::Index at = 0;
  for (const Var& v : parts) {
    out.middleRows(at, v.rows()) = v.value();
    pieces.emplace_back(v.id(), at);
    at += v.rows();
  }
  return parts.front().tape()->push(std::move(out), needs, [pieces](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (auto [id, offset] : pieces)
      if (t.requires_grad(id)) t.grad(id) += g.middleRows(offset, t.value(id).rows());
  });
}

Var rowwise_dot(Var a, Var b) {
  check_same_tape(a, b);
  check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "rowwise_dot");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape()->push(std::move(out), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).array() += t.value(ib).array().colwise() * g.col(0).array();
    if (t.requires_grad(ib)) t.grad(ib).array() += t.value(ia).array().colwise() * g.col(0).array();
  });
}

Var sum(Var a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->push(std::move(out), any_grad({a}), [ia](Tape& t, int self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
}

Var squared_error(Var pred, const Matrix& target) {
  check_shape(pred.rows() == target.rows() && pred.cols() == target.cols(), "squared_error");
  Matrix diff = pred.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm();
  const int ip = pred.id();
  return pred.tape()->push(std::move(out), any_grad({pred}), [ip, diff = std::move(diff)](Tape& t, int self) {
    t.grad(ip) += (2.0 * t.grad(self)(0, 0)) * diff;
  });
}

Var weighted_bce_with_logits(Var logits, std::span<const double> labels, std::span<const double> weights) {
  const Matrix& z = logits.value();
  check_shape(z.cols() == 1 && static_cast<std::size_t>(z.rows()) == labels.size() &&
                  labels.size() == weights.size(),
              "weighted_bce_with_logits");
  Matrix dz(z.rows(), 1);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double y = labels[i], w = weights[i], x = z(i, 0);
    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    // log s(x) = -softplus(-x), log(1 - s(x)) = -softplus(x)
    loss += w * y * softplus(-x) + (1.0 - y) * softplus(x);
    dz(i, 0) = -w * y * (1.0 - s) + (1.0 - y) * s;
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  const int il = logits.id();
  return logits.tape()->push(std::move(out), any_grad({logits}), [il, dz = std::move(dz)](Tape& t, int self) {
    t.grad(il) += t.grad(self)(0, 0) * dz;
  });
}

Var neg_log_sigmoid_sum(Var logits) {
  const Matrix& z = logits.value();
  Matrix dz(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double x = z(i);
    loss += softplus(-x);
    const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    dz(i) = -(1.0 - s);
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  const int il = logits.id();
  return logits.tape()->push(std::move(out), any_grad({logits}), [il, dz = std::move(dz)](Tape& t, int self) {
    t.grad(il) += t.grad(self)(0, 0) * dz;
  });
}

}  // namespace pdrec::ad
