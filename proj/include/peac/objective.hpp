#pragma once

#include <span>
#include <string>
#include <vector>

#include "peac/autograd.hpp"
#include "peac/geometry.hpp"
#include "peac/image.hpp"

namespace peac {

/// The four loss components and their unweighted sum.
struct LossBundle {
  double order = 0.0;     ///< patch order classification
  double restore = 0.0;   ///< patch appearance restoration
  double global_c = 0.0;  ///< symmetrized global consistency
  double local_c = 0.0;   ///< symmetrized local consistency
  double total = 0.0;

  bool all_finite() const;
};

/// Which distortions run and which loss terms enter the total. Named rows
/// follow the ablation matrix (OD, AD, order, restore, global, local).
struct LossToggles {
  bool od = true;
  bool ad = true;
  bool order = true;
  bool restore = true;
  bool global = true;
  bool local = true;

  /// Throws ConfigError for an unknown name.
  static LossToggles from_variant(const std::string& name);
  /// Name of the matching ablation row; throws ConfigError when none matches.
  std::string variant() const;
  static std::vector<std::string> variant_names();

  bool operator==(const LossToggles&) const = default;
};

struct LossWeights {
  double order = 1.0;
  double restore = 1.0;
  double global = 1.0;
  double local = 1.0;
};

// Graph terms for one sample (no batch averaging).

/// Sum over slots of the cross-entropy against the original patch index.
ag::Var order_term(ag::Var logits, std::span<const int> permutation);
/// Sum over patches of ||original - predicted||^2.
ag::Var restore_term(ag::Var restored, const Matrix& target_patches);
/// ||y_s/|y_s| - y_t/|y_t|||^2; y_teacher should be a constant.
ag::Var global_term(ag::Var y_student, ag::Var y_teacher);
/// indicator * sum_i ||p_s[m_i]/|.| - p_t[n_i]/|.|||^2. Throws std::out_of_range
/// for correspondence indices outside the embedding tables.
ag::Var local_term(ag::Var p_student, ag::Var p_teacher, const Correspondence& corr, int indicator);

// Value-level batch losses.

/// Batch mean of summed per-token cross-entropy. Throws NumericError on non-finite logits.
double order_loss(std::span<const Matrix> logits, std::span<const std::vector<int>> permutations);
/// Batch mean of summed squared patch errors. Throws ShapeError.
double restore_loss(std::span<const Matrix> restored, std::span<const Matrix> originals);

/// Per-pair global term. Throws NumericError for a zero vector.
double global_consistency_term(const RowVector& y_student, const RowVector& y_teacher);

/// One direction of the two-crop pass: student saw one crop, teacher the other.
struct GlobalPass {
  RowVector student;
  RowVector teacher;
};

/// Batch mean of forward + swapped per-pair terms.
double global_consistency_loss(std::span<const GlobalPass> forward, std::span<const GlobalPass> swapped);

struct LocalPass {
  Matrix student;  ///< N x H local embeddings of the student crop
  Matrix teacher;  ///< N x H local embeddings of the teacher crop
  Correspondence corr;  ///< (student index, teacher index)
  int indicator = 1;    ///< from the student crop's distortion record
};

double local_consistency_term(const LocalPass& pass);
/// (1/B) sum_b I_b * sum_i ||.||^2 for one direction.
double local_consistency_loss(std::span<const LocalPass> passes);
/// Forward plus swapped direction.
double local_consistency_loss(std::span<const LocalPass> forward, std::span<const LocalPass> swapped);

/// Weighted sum of the enabled components; disabled components are reported as 0.
LossBundle total_loss(const LossBundle& components, const LossToggles& toggles, const LossWeights& weights = {});

}  // namespace peac
