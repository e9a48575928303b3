#include "peac/objective.hpp"

#include <array>
#include <cmath>
#include <utility>

#include "peac/errors.hpp"

namespace peac {

bool LossBundle::all_finite() const {
  return std::isfinite(order) && std::isfinite(restore) && std::isfinite(global_c) && std::isfinite(local_c) &&
         std::isfinite(total);
}

namespace {

struct NamedVariant {
  const char* name;
  LossToggles toggles;
};

// OD, AD, order, restore, global, local
const std::array<NamedVariant, 13> kVariants{{
    {"peac", {true, true, true, true, true, true}},
    {"peac_oag", {true, true, true, true, true, false}},
    {"peac_og", {true, false, true, false, true, false}},
    {"peac_ogl", {true, false, true, false, true, true}},
    {"peac_od", {true, false, true, true, true, true}},
    {"peac_ad", {false, true, true, true, true, true}},
    {"popar", {true, true, true, true, false, false}},
    {"popar_o", {true, false, true, false, false, false}},
    {"popar_a", {false, true, false, true, false, false}},
    {"consistency_g", {false, false, false, false, true, false}},
    {"consistency_l", {false, false, false, false, false, true}},
    {"consistency_gl", {false, false, false, false, true, true}},
    {"none", {false, false, false, false, false, false}},
}};

}  // namespace

LossToggles LossToggles::from_variant(const std::string& name) {
  for (const auto& v : kVariants)
    if (name == v.name) return v.toggles;
  std::string msg = "unknown variant '" + name + "' (known:";
  for (const auto& v : kVariants) msg += std::string(" ") + v.name;
  throw ConfigError(msg + ")");
}

std::string LossToggles::variant() const {
  for (const auto& v : kVariants)
    if (v.toggles == *this) return v.name;
  throw ConfigError("loss toggles (od=" + std::to_string(od) + " ad=" + std::to_string(ad) + " order=" +
                    std::to_string(order) + " restore=" + std::to_string(restore) + " global=" +
                    std::to_string(global) + " local=" + std::to_string(local) +
                    ") do not match any named variant");
}

std::vector<std::string> LossToggles::variant_names() {
  std::vector<std::string> out;
  for (const auto& v : kVariants) out.emplace_back(v.name);
  return out;
}

ag::Var order_term(ag::Var logits, std::span<const int> permutation) {
  return ag::cross_entropy_rows(logits, permutation);
}

ag::Var restore_term(ag::Var restored, const Matrix& target_patches) {
  if (restored.rows() != target_patches.rows() || restored.cols() != target_patches.cols())
    throw ShapeError("restore_term: prediction and target shapes differ");
  return ag::sum_squares(ag::sub(restored, restored.tape()->constant(target_patches)));
}

ag::Var global_term(ag::Var y_student, ag::Var y_teacher) {
  return ag::sum_squares(ag::sub(ag::l2_normalize_rows(y_student), ag::l2_normalize_rows(y_teacher)));
}

ag::Var local_term(ag::Var p_student, ag::Var p_teacher, const Correspondence& corr, int indicator) {
  ag::Tape& tape = *p_student.tape();
  std::vector<int> rows_s, rows_t;
  rows_s.reserve(corr.pairs.size());
  rows_t.reserve(corr.pairs.size());
  for (const auto& [s, t] : corr.pairs) {
    if (s < 0 || s >= p_student.rows() || t < 0 || t >= p_teacher.rows())
      throw std::out_of_range("local_term: correspondence index out of range");
    rows_s.push_back(s);
    rows_t.push_back(t);
  }
  if (indicator == 0 || corr.pairs.empty()) return tape.constant(Matrix::Zero(1, 1));
  ag::Var a = ag::l2_normalize_rows(ag::gather_rows(p_student, rows_s));
  ag::Var b = ag::l2_normalize_rows(ag::gather_rows(p_teacher, rows_t));
  ag::Var v = ag::sum_squares(ag::sub(a, b));
  return indicator == 1 ? v : ag::scale(v, static_cast<double>(indicator));
}

double order_loss(std::span<const Matrix> logits, std::span<const std::vector<int>> permutations) {
  if (logits.size() != permutations.size() || logits.empty())
    throw ShapeError("order_loss: need one permutation per logit table and a non-empty batch");
  double acc = 0.0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    ag::Tape tape;
    ag::NoGradGuard guard(tape);
    acc += order_term(tape.constant(logits[b]), permutations[b]).scalar();
  }
  return acc / static_cast<double>(logits.size());
}

double restore_loss(std::span<const Matrix> restored, std::span<const Matrix> originals) {
  if (restored.size() != originals.size() || restored.empty())
    throw ShapeError("restore_loss: need one target per prediction and a non-empty batch");
  double acc = 0.0;
  for (std::size_t b = 0; b < restored.size(); ++b) {
    if (restored[b].rows() != originals[b].rows() || restored[b].cols() != originals[b].cols())
      throw ShapeError("restore_loss: prediction and target shapes differ");
    acc += (restored[b] - originals[b]).squaredNorm();
  }
  return acc / static_cast<double>(restored.size());
}

double global_consistency_term(const RowVector& y_student, const RowVector& y_teacher) {
  if (y_student.size() != y_teacher.size()) throw ShapeError("global_consistency_term: width mismatch");
  ag::Tape tape;
  ag::NoGradGuard guard(tape);
  return global_term(tape.constant(Matrix(y_student)), tape.constant(Matrix(y_teacher))).scalar();
}

double global_consistency_loss(std::span<const GlobalPass> forward, std::span<const GlobalPass> swapped) {
  if (forward.size() != swapped.size() || forward.empty())
    throw ShapeError("global_consistency_loss: both directions need the same non-empty batch");
  double acc = 0.0;
  for (std::size_t b = 0; b < forward.size(); ++b) {
    acc += global_consistency_term(forward[b].student, forward[b].teacher);
    acc += global_consistency_term(swapped[b].student, swapped[b].teacher);
  }
  return acc / static_cast<double>(forward.size());
}

double local_consistency_term(const LocalPass& pass) {
  ag::Tape tape;
  ag::NoGradGuard guard(tape);
  return local_term(tape.constant(pass.student), tape.constant(pass.teacher), pass.corr, pass.indicator).scalar();
}

double local_consistency_loss(std::span<const LocalPass> passes) {
  if (passes.empty()) throw ShapeError("local_consistency_loss: empty batch");
  double acc = 0.0;
  for (const LocalPass& p : passes) acc += local_consistency_term(p);
  return acc / static_cast<double>(passes.size());
}

double local_consistency_loss(std::span<const LocalPass> forward, std::span<const LocalPass> swapped) {
  if (forward.size() != swapped.size()) throw ShapeError("local_consistency_loss: direction batch sizes differ");
  return local_consistency_loss(forward) + local_consistency_loss(swapped);
}

LossBundle total_loss(const LossBundle& c, const LossToggles& toggles, const LossWeights& w) {
  LossBundle out;
  out.order = toggles.order ? w.order * c.order : 0.0;
  out.restore = toggles.restore ? w.restore * c.restore : 0.0;
  out.global_c = toggles.global ? w.global * c.global_c : 0.0;
  out.local_c = toggles.local ? w.local * c.local_c : 0.0;
  out.total = out.order + out.restore + out.global_c + out.local_c;
  return out;
}

}  // namespace peac
