#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace pdrec::ad {

using Matrix = Eigen::MatrixXd;

// A trainable tensor. `grad` accumulates across every tape that binds it
// until the optimizer consumes it.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense double matrices. Nodes are appended in
// evaluation order, so a reverse sweep visits every node after all of its
// consumers.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  // With record_gradients=false, params are bound as constants and no
  // backward closures are kept (inference mode).
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Param& p);

  // Seeds d(loss)/d(loss) = 1 and accumulates leaf gradients into the bound
  // params' `grad`.
  void backward(Var loss);

  // Used by op implementations.
  Var push(Matrix value, bool requires_grad, Backward backward);
  const Matrix& value(int id) const;
  Matrix& grad(int id);
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Param* param = nullptr;
    Backward backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> bound_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
// 1 - a
Var one_minus(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-8);
// Row-wise softmax where row i only sees columns j <= i.
Var causal_softmax(Var scores);
Var gather_rows(Var table, std::span<const int> rows);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
// n x 1 column of per-row dot products.
Var rowwise_dot(Var a, Var b);
Var sum(Var a);
// Sum of squared differences against a constant target; 1 x 1.
Var squared_error(Var pred, const Matrix& target);
// -sum_i [w_i y_i log s(z_i) + (1 - y_i) log(1 - s(z_i))], computed from logits.
Var weighted_bce_with_logits(Var logits, std::span<const double> labels, std::span<const double> weights);
// -sum_i log s(z_i)
Var neg_log_sigmoid_sum(Var logits);

// log(1 + e^x) without overflow.
double softplus(double x);

}  // namespace pdrec::ad
