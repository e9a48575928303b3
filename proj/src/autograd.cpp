#include "peac/autograd.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "peac/errors.hpp"

namespace peac::ag {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& v : inputs) needs = needs || requires_grad(v.id());
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(fn) : nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward: variable from another tape");
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward: root must be a 1x1 scalar");
  Node& r = nodes_[static_cast<std::size_t>(root.id())];
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
        << b.cols();
    throw ShapeError(msg.str());
  }
}

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate_expr(ib, -tp.grad(self));
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(a.value() * s, {a}, [ia, s](Tape& tp, int self) { tp.accumulate_expr(ia, tp.grad(self) * s); });
}

Var add_row(Var a, Var bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) throw ShapeError("add_row: bias must be 1 x cols");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = bias.id();
  Matrix out = a.value().rowwise() + bias.value().row(0);
  return t.record(std::move(out), {a, bias}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate_expr(ib, tp.grad(self).colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate_expr(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate_expr(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: inner dimensions differ");
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate_expr(ia, g * tp.value(ib));
    if (tp.requires_grad(ib)) tp.accumulate_expr(ib, g.transpose() * tp.value(ia));
  });
}

Var gelu(Var a) {
  // Exact (erf) form: smooth everywhere, which the finite-difference checks rely on.
  Tape& t = *a.tape();
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
  return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
    const Matrix& xv = tp.value(ia);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = xv.unaryExpr([inv_sqrt_2pi](double v) {
      return 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    tp.accumulate_expr(ia, tp.grad(self).cwiseProduct(d));
  });
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    tp.accumulate_expr(ia, y.cwiseProduct(g - dots.replicate(1, g.cols())));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Eigen::Index cols = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 || beta.cols() != cols)
    throw ShapeError("layer_norm: gamma/beta must be 1 x cols");
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), cols);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return t.record(std::move(out), {x, gamma, beta},
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ig)) tp.accumulate_expr(ig, g.cwiseProduct(xhat).colwise().sum());
                    if (tp.requires_grad(ib)) tp.accumulate_expr(ib, g.colwise().sum());
                    if (tp.requires_grad(ix)) {
                      const Matrix dxhat = g.array().rowwise() * tp.value(ig).row(0).array();
                      const Eigen::VectorXd m1 = dxhat.rowwise().mean();
                      const Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                      Matrix dx = dxhat;
                      dx.colwise() -= m1;
                      dx -= xhat.cwiseProduct(m2.replicate(1, xhat.cols()));
                      dx.array().colwise() *= inv_std.array();
                      tp.accumulate(ix, dx);
                    }
                  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: range outside matrix");
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index total = a.cols();
  return t.record(a.value().middleCols(start, count), {a}, [ia, start, count, total](Tape& tp, int self) {
    Matrix g = Matrix::Zero(tp.grad(self).rows(), total);
    g.middleCols(start, count) = tp.grad(self);
    tp.accumulate(ia, g);
  });
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("hconcat: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("hconcat: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Tape& t = *parts[0].tape();
  return t.record(std::move(out), parts, [ids, widths](Tape& tp, int self) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate_expr(ids[i], tp.grad(self).middleCols(off, widths[i]));
      off += widths[i];
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::out_of_range("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index src_rows = a.rows();
  std::vector<int> idx(rows.begin(), rows.end());
  return t.record(std::move(out), {a}, [ia, src_rows, idx = std::move(idx)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix acc = Matrix::Zero(src_rows, g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) acc.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(ia, acc);
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const Eigen::Index n = a.rows();
  return t.record(a.value().colwise().mean(), {a}, [ia, n](Tape& tp, int self) {
    tp.accumulate_expr(ia, tp.grad(self).replicate(n, 1) / static_cast<double>(n));
  });
}

Var l2_normalize_rows(Var a, double eps) {
  const Matrix& x = a.value();
  Eigen::VectorXd norms = x.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0)) {
      if (std::isfinite(norms(r))) throw NumericError("l2_normalize: zero-norm embedding vector");
      throw NumericError("l2_normalize: non-finite embedding vector");
    }
  }
  Eigen::VectorXd denom = norms.cwiseMax(eps);
  Matrix out = x.array().colwise() / denom.array();
  Tape& t = *a.tape();
  const int ia = a.id();
  return t.record(std::move(out), {a}, [ia, denom, norms, eps](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(self);
    Matrix dx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (norms(r) > eps) {
        dx.row(r) = (g.row(r) - y.row(r) * y.row(r).dot(g.row(r))) / denom(r);
      } else {
        dx.row(r) = g.row(r) / denom(r);
      }
    }
    tp.accumulate(ia, dx);
  });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value()); }

Var sum_squares(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return t.record(std::move(out), {a}, [ia](Tape& tp, int self) {
    tp.accumulate_expr(ia, tp.value(ia) * (2.0 * tp.grad(self)(0, 0)));
  });
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows())
    throw ShapeError("cross_entropy_rows: one target per row required");
  if (!x.allFinite()) throw NumericError("cross_entropy_rows: non-finite logits");
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= x.cols()) throw std::out_of_range("cross_entropy_rows: target out of range");
    const double mx = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - mx).exp().matrix();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += (mx + std::log(z)) - x(r, tgt);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  Tape& t = *logits.tape();
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return t.record(std::move(out), {logits}, [il, probs = std::move(probs), tg = std::move(tg)](Tape& tp, int self) {
    Matrix g = probs;
    for (std::size_t r = 0; r < tg.size(); ++r) g(static_cast<Eigen::Index>(r), tg[r]) -= 1.0;
    tp.accumulate_expr(il, g * tp.grad(self)(0, 0));
  });
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("sum: no inputs");
  Matrix out = Matrix::Zero(1, 1);
  std::vector<int> ids;
  for (const Var& s : scalars) {
    if (s.rows() != 1 || s.cols() != 1) throw ShapeError("sum: inputs must be 1x1");
    out(0, 0) += s.scalar();
    ids.push_back(s.id());
  }
  Tape& t = *scalars[0].tape();
  return t.record(std::move(out), scalars, [ids](Tape& tp, int self) {
    for (int id : ids) tp.accumulate(id, tp.grad(self));
  });
}

}  // namespace peac::ag
