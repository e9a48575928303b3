#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "peac/distortion.hpp"
#include "peac/geometry.hpp"
#include "peac/model.hpp"
#include "peac/objective.hpp"

namespace peac {

/// Pretraining configuration. Every field has a flat `key = value` spelling,
/// listed by TrainConfig::keys(); `to_text` writes all of them.
struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  int warmup_epochs = 5;
  int epochs = 25;
  int batch_size = 8;
  double ema_alpha = 0.999;
  LossToggles toggles;
  LossWeights weights;
  double p_od = 0.5;
  double p_ad = 0.5;
  std::uint64_t seed = 0;
  /// Unvalidated until validate(); kept raw so bad values can be reported.
  int grid_n = 11;
  int grid_m = 8;
  int grid_k = 8;
  int depth = 4;
  int dim = 64;
  int heads = 4;
  int mlp_ratio = 4;
  double max_grad_norm = 0.0;  ///< 0 disables clipping
  std::int64_t max_steps = 0;  ///< 0 runs the full schedule; otherwise stops early
  int checkpoint_every = 0;    ///< 0 saves only the initial and final states

  /// Throws ConfigError / GridSpecError naming the violated rule.
  void validate() const;
  GridSpec grid() const { return make_grid_spec(grid_n, grid_m, grid_k); }
  EncoderConfig encoder() const;
  DistortionConfig distortion() const;

  /// Sets one key from its text value. Throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  static const std::vector<std::string>& keys();
};

/// Parses `key = value` lines ('#' starts a comment) over `base`.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
/// Throws DataError if the file cannot be read.
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
std::string to_text(const TrainConfig& config);

/// Shortest round-trip decimal spelling of a double.
std::string format_double(double v);

}  // namespace peac
