#pragma once

#include <array>
#include <string>
#include <vector>

#include "peac/image.hpp"
#include "peac/rng.hpp"

namespace peac {

struct DistortionConfig {
  double p_od = 0.5;  ///< probability of patch order distortion
  double p_ad = 0.5;  ///< probability of patch appearance distortion
};

/// Ground truth for the student-side pretext tasks.
struct DistortionRecord {
  /// permutation[slot] = original row-major index of the patch now at `slot`.
  std::vector<int> permutation;
  bool od_applied = false;
  bool ad_applied = false;
  /// Names of the appearance transforms that ran, in order.
  std::vector<std::string> ad_log;
  /// Crop before any distortion; restoration target.
  Image original_crop;

  /// Local-consistency gate: 0 when the patch order was distorted.
  int indicator() const { return od_applied ? 0 : 1; }
};

struct DistortedCrop {
  Image crop;
  DistortionRecord record;
};

/// Independent OD / AD coin flips; AD runs first, then the patch shuffle.
DistortedCrop maybe_distort(const Image& crop, int m, Rng& rng, const DistortionConfig& config = {});

/// One or more appearance transforms; the result stays in [0, 1].
Image apply_appearance_distortion(const Image& crop, int m, Rng& rng,
                                  std::vector<std::string>* log = nullptr);

// Individual transforms.

/// Shuffles pixels inside `count` random windows of window_rows x window_cols.
Image local_pixel_shuffle(const Image& img, int window_rows, int window_cols, int count, Rng& rng);

struct BezierCurve {
  std::array<double, 4> x{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  std::array<double, 4> y{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
};

/// Random intensity curve; reversed x control points give a non-monotonic remap.
BezierCurve random_bezier(Rng& rng);
Image bezier_remap(const Image& img, const BezierCurve& curve);

struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

/// Fills the rectangles with uniform noise.
Image inpaint(const Image& img, const std::vector<Rect>& rects, Rng& rng);
/// Fills everything outside the rectangles with uniform noise.
Image outpaint(const Image& img, const std::vector<Rect>& keep, Rng& rng);

std::vector<int> random_permutation(int n, Rng& rng);
std::vector<int> inverse_permutation(const std::vector<int>& perm);
/// Rearranges patches: output slot j holds input patch perm[j].
Image permute_patches(const Image& crop, int m, const std::vector<int>& perm);

}  // namespace peac
