#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "peac/image.hpp"

namespace peac::ag {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient accumulated by Tape::backward (zero-sized if none reached this node).
  const Matrix& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode recorder over dense double matrices.
///
/// Nodes are appended in evaluation order; backward() walks them in reverse.
/// A node records a backward closure only when at least one input requires a
/// gradient and recording is enabled, so constant subgraphs (the teacher
/// branch) cost nothing on the way back.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Matrix value);

  /// Seeds d(root)/d(root) = 1 and propagates. root must be 1x1.
  void backward(Var root);

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  // Used by op implementations.
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Adds `g` into the gradient of node `id` when that node requires one.
  void accumulate(int id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

/// Disables recording for the current scope.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.grad_enabled()) { tape_.set_grad_enabled(false); }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// Elementwise / structural ops.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// a (r x c) + bias (1 x c) broadcast over rows.
Var add_row(Var a, Var bias);
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var gelu(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var hconcat(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const int> rows);
/// Mean over rows, 1 x c.
Var mean_rows(Var a);
/// Divides each row by max(||row||, eps). Throws NumericError on a zero row.
Var l2_normalize_rows(Var a, double eps = 1e-12);
Var stop_gradient(Var a);

// Reductions to 1x1.
Var sum_squares(Var a);
/// Sum over rows of -log softmax(logits)[row, target[row]]. Throws NumericError on non-finite logits.
Var cross_entropy_rows(Var logits, std::span<const int> targets);
Var sum(std::span<const Var> scalars);

}  // namespace peac::ag
