#pragma once

#include <span>
#include <string>
#include <vector>

#include "peac/autograd.hpp"
#include "peac/image.hpp"
#include "peac/rng.hpp"

namespace peac {

/// ViT-style encoder geometry. Tokens are patch x patch pixel windows laid out
/// on a grid x grid lattice (grid = k of the cropping GridSpec).
struct EncoderConfig {
  int depth = 4;
  int dim = 64;
  int heads = 4;
  int patch = 8;
  int grid = 8;
  int mlp_ratio = 4;
  int expander_hidden = 0;  ///< 0 -> 2 * dim
  int embed_dim = 0;        ///< expander output width H; 0 -> dim
  bool positional = true;

  int tokens() const { return grid * grid; }
  int crop_side() const { return grid * patch; }
  int hidden() const { return expander_hidden > 0 ? expander_hidden : 2 * dim; }
  int out_dim() const { return embed_dim > 0 ? embed_dim : dim; }
  /// Throws ConfigError.
  void validate() const;

  static EncoderConfig desk();
  /// ViT-B/16 at 224 px. Documented only; far too large for desk training.
  static EncoderConfig paper_vit_b();

  bool operator==(const EncoderConfig&) const = default;
};

/// Named parameter tensors in a fixed registration order.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Matrix> values;

  std::size_t size() const { return values.size(); }
  std::size_t scalar_count() const;
  std::size_t index_of(const std::string& name) const;
  bool same_shapes(const ParamSet& other) const;
  /// Zero tensors with the same shapes.
  ParamSet zeros_like() const;
  /// Order-dependent FNV-1a hash over the raw bytes; used for mutation checks.
  std::uint64_t checksum() const;
};

ParamSet init_params(const EncoderConfig& config, Rng& rng);

struct EncodeOptions {
  bool heads = false;      ///< order logits and restoration (student passes)
  bool expanders = true;   ///< global / local embeddings
};

/// Nodes produced by one encoder pass.
struct EncoderGraph {
  ag::Var features;      ///< N x D token features
  ag::Var pooled;        ///< 1 x D mean over tokens
  ag::Var global_embed;  ///< 1 x H
  ag::Var local_embeds;  ///< N x H
  ag::Var order_logits;  ///< N x tokens()
  ag::Var restored;      ///< N x patch^2
};

/// Puts every parameter on the tape, as trainable leaves or as constants.
std::vector<ag::Var> bind_params(ag::Tape& tape, const ParamSet& params, bool trainable);

/// `patches`: one flattened patch per row. `slots`: positional-embedding row
/// for each token (empty -> 0..N-1).
EncoderGraph encode(ag::Tape& tape, const EncoderConfig& config, std::span<const ag::Var> params,
                    const Matrix& patches, std::span<const int> slots, const EncodeOptions& options);

struct EncoderOutput {
  Matrix patch_features;
  RowVector pooled;
  RowVector global_embed;
  Matrix local_embeds;
  Matrix order_logits;  ///< empty unless heads requested
  Matrix restored;      ///< empty unless heads requested
};

/// Value-only forward pass over a crop of side grid * patch.
EncoderOutput encode(const EncoderConfig& config, const ParamSet& params, const Image& crop,
                     const EncodeOptions& options = {});
/// Value-only forward pass over explicit patches / slots (partial grids).
EncoderOutput encode_patches(const EncoderConfig& config, const ParamSet& params, const Matrix& patches,
                             std::span<const int> slots, const EncodeOptions& options = {});

/// Student and EMA teacher. The teacher mirrors every student tensor,
/// including heads and expanders.
struct StudentTeacher {
  EncoderConfig config;
  ParamSet student;
  ParamSet teacher;
  double ema_alpha = 0.999;
};

StudentTeacher make_student_teacher(const EncoderConfig& config, std::uint64_t seed, double ema_alpha = 0.999);

/// teacher <- alpha * teacher + (1 - alpha) * student. Throws ShapeError.
void ema_update(const ParamSet& student, ParamSet& teacher, double alpha);
inline void ema_update(StudentTeacher& st) { ema_update(st.student, st.teacher, st.ema_alpha); }

}  // namespace peac
