#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "peac/image.hpp"
#include "peac/rng.hpp"

namespace peac {

/// Grid-wise cropping geometry.
///
/// A seed image is resized to I' with n x n patches of side m. I'' drops one
/// patch row/column ((n-1) x (n-1) patches) and is cut from I' at a pixel
/// offset. Two crops of k x k patches are then cut from I'' along its patch
/// grid, so every overlapping patch has an exact partner.
struct GridSpec {
  int n = 11;
  int m = 8;
  int k = 8;

  int outer_side() const { return n * m; }
  int inner_side() const { return (n - 1) * m; }
  int crop_side() const { return k * m; }
  int tokens() const { return k * k; }
  /// Largest crop offset (patch units) inside I''.
  int max_offset() const { return n - 1 - k; }
  /// Overlap fraction of the two crops at maximal displacement.
  double min_overlap_fraction() const;

  bool operator==(const GridSpec&) const = default;
};

/// Validates (n, m, k). Throws GridSpecError naming the violated rule.
GridSpec make_grid_spec(int n, int m, int k);

inline GridSpec paper_grid() { return make_grid_spec(19, 32, 14); }
inline GridSpec desk_grid() { return make_grid_spec(11, 8, 8); }

struct PatchOffset {
  int row = 0;
  int col = 0;
  bool operator==(const PatchOffset&) const = default;
};

struct PixelOffset {
  int row = 0;
  int col = 0;
  bool operator==(const PixelOffset&) const = default;
};

struct CropPairPlan {
  GridSpec spec;
  PixelOffset inner_offset;  ///< top-left of I'' within I', each in [0, m)
  PatchOffset offset_a;      ///< crop x within I'' (patch units)
  PatchOffset offset_b;      ///< crop x' within I'' (patch units)

  int overlap_count() const;
  double overlap_fraction() const;
  /// Exchanges the roles of x and x'.
  CropPairPlan swapped() const;

  bool operator==(const CropPairPlan&) const = default;
};

/// Patch-index pairs (row-major index in x, row-major index in x') that
/// cover the same patch of I''.
struct Correspondence {
  std::vector<std::pair<int, int>> pairs;

  int z() const { return static_cast<int>(pairs.size()); }
  Correspondence swapped() const;
  bool operator==(const Correspondence&) const = default;
};

CropPairPlan sample_crop_pair(const GridSpec& spec, Rng& rng);

/// Validates a plan against its spec; throws ConfigError.
void check_plan(const CropPairPlan& plan);

Correspondence overlap_correspondence(const CropPairPlan& plan);

/// Cuts x and x' out of I''. Throws ShapeError when the image side is not (n-1)*m.
std::pair<Image, Image> extract_crops(const Image& inner, const CropPairPlan& plan);

/// Random-area crop of the raw image used as the seed I.
struct SeedCrop {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

/// Area fraction uniform in [0.5, 1], aspect ratio log-uniform in [3/4, 4/3].
SeedCrop sample_seed_crop(int rows, int cols, Rng& rng);

/// Bilinear resize with half-pixel centres (corner alignment off), edge clamped.
Image resize_bilinear(const Image& src, int rows, int cols);

/// Smallest raw image side accepted as a seed image.
inline constexpr int kMinSeedSide = 32;

/// Side to load training images at: the outer side, but never below kMinSeedSide.
inline int seed_load_side(const GridSpec& spec) { return std::max(spec.outer_side(), kMinSeedSide); }

/// Seed crop -> resize to n*m -> cut I'' at the inner offset.
/// Throws ShapeError when the raw image is smaller than kMinSeedSide on either side.
Image prepare_seed_image(const Image& raw, const GridSpec& spec, const SeedCrop& seed,
                         PixelOffset inner_offset);
Image prepare_seed_image(const Image& raw, const GridSpec& spec, PixelOffset inner_offset,
                         Rng& rng);

/// Splits a crop into row-major patches, one flattened m*m patch per row.
Matrix patchify(const Image& crop, int m);
Image unpatchify(const Matrix& patches, int grid_rows, int grid_cols, int m);

}  // namespace peac
