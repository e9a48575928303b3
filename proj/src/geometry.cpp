#include "peac/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "peac/errors.hpp"

namespace peac {

double GridSpec::min_overlap_fraction() const {
  const double side = 2.0 * k - (n - 1);
  return (side * side) / (static_cast<double>(k) * k);
}

GridSpec make_grid_spec(int n, int m, int k) {
  std::ostringstream msg;
  msg << "invalid GridSpec (n=" << n << ", m=" << m << ", k=" << k << "): ";
  if (n < 2) {
    msg << "rule n >= 2 violated";
    throw GridSpecError(msg.str());
  }
  if (m < 1) {
    msg << "rule m >= 1 violated";
    throw GridSpecError(msg.str());
  }
  if (k < 1 || k > n - 1) {
    msg << "rule 1 <= k <= n-1 violated";
    throw GridSpecError(msg.str());
  }
  const long long side = 2LL * k - (n - 1);
  if (side <= 0) {
    msg << "rule 2k > n-1 violated: crops at opposite corners of I'' would not overlap";
    throw GridSpecError(msg.str());
  }
  // (2k - (n-1))^2 >= k^2 / 2, kept in integers.
  if (2 * side * side < 1LL * k * k) {
    msg << "overlap rule (2k-(n-1))^2 >= k^2/2 violated: " << side * side << " < "
        << (static_cast<double>(k) * k) / 2.0 << ", minimum overlap would fall below 50%";
    throw GridSpecError(msg.str());
  }
  return GridSpec{n, m, k};
}

int CropPairPlan::overlap_count() const {
  const int dr = std::abs(offset_a.row - offset_b.row);
  const int dc = std::abs(offset_a.col - offset_b.col);
  return std::max(0, spec.k - dr) * std::max(0, spec.k - dc);
}

double CropPairPlan::overlap_fraction() const {
  return static_cast<double>(overlap_count()) / spec.tokens();
}

CropPairPlan CropPairPlan::swapped() const {
  CropPairPlan out = *this;
  std::swap(out.offset_a, out.offset_b);
  return out;
}

Correspondence Correspondence::swapped() const {
  Correspondence out;
  out.pairs.reserve(pairs.size());
  for (const auto& [a, b] : pairs) out.pairs.emplace_back(b, a);
  // Both columns increase together, so the swapped list stays row-major ordered.
  return out;
}

CropPairPlan sample_crop_pair(const GridSpec& spec, Rng& rng) {
  CropPairPlan plan;
  plan.spec = spec;
  plan.inner_offset.row = uniform_int(rng, 0, spec.m - 1);
  plan.inner_offset.col = uniform_int(rng, 0, spec.m - 1);
  const int hi = spec.max_offset();
  plan.offset_a.row = uniform_int(rng, 0, hi);
  plan.offset_a.col = uniform_int(rng, 0, hi);
  plan.offset_b.row = uniform_int(rng, 0, hi);
  plan.offset_b.col = uniform_int(rng, 0, hi);
  return plan;
}

void check_plan(const CropPairPlan& plan) {
  const GridSpec& s = plan.spec;
  auto in = [](int v, int lo, int hi) { return v >= lo && v <= hi; };
  if (!in(plan.inner_offset.row, 0, s.m - 1) || !in(plan.inner_offset.col, 0, s.m - 1))
    throw ConfigError("crop plan: inner offset outside [0, m)");
  for (const PatchOffset& o : {plan.offset_a, plan.offset_b}) {
    if (!in(o.row, 0, s.max_offset()) || !in(o.col, 0, s.max_offset()))
      throw ConfigError("crop plan: crop offset outside [0, n-1-k]");
  }
}

Correspondence overlap_correspondence(const CropPairPlan& plan) {
  check_plan(plan);
  const int k = plan.spec.k;
  // Patch (r, c) of x sits at I'' patch offset_a + (r, c); in x' that is
  // offset_a - offset_b + (r, c).
  const int dr = plan.offset_a.row - plan.offset_b.row;
  const int dc = plan.offset_a.col - plan.offset_b.col;
  const int r0 = std::max(0, -dr), r1 = std::min(k, k - dr);
  const int c0 = std::max(0, -dc), c1 = std::min(k, k - dc);

  Correspondence out;
  out.pairs.reserve(static_cast<std::size_t>(plan.overlap_count()));
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      out.pairs.emplace_back(r * k + c, (r + dr) * k + (c + dc));
    }
  }
  return out;
}

std::pair<Image, Image> extract_crops(const Image& inner, const CropPairPlan& plan) {
  check_plan(plan);
  const GridSpec& s = plan.spec;
  if (inner.rows() != s.inner_side() || inner.cols() != s.inner_side()) {
    std::ostringstream msg;
    msg << "extract_crops: expected " << s.inner_side() << "x" << s.inner_side() << " image, got "
        << inner.rows() << "x" << inner.cols();
    throw ShapeError(msg.str());
  }
  const int side = s.crop_side();
  Image a = inner.block(plan.offset_a.row * s.m, plan.offset_a.col * s.m, side, side);
  Image b = inner.block(plan.offset_b.row * s.m, plan.offset_b.col * s.m, side, side);
  return {std::move(a), std::move(b)};
}

SeedCrop sample_seed_crop(int rows, int cols, Rng& rng) {
  const double area = static_cast<double>(rows) * cols * uniform_real(rng, 0.5, 1.0);
  const double log_aspect = uniform_real(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0));
  const double aspect = std::exp(log_aspect);  // width / height
  int width = static_cast<int>(std::lround(std::sqrt(area * aspect)));
  int height = static_cast<int>(std::lround(std::sqrt(area / aspect)));
  width = std::clamp(width, 1, cols);
  height = std::clamp(height, 1, rows);
  SeedCrop crop;
  crop.height = height;
  crop.width = width;
  crop.top = uniform_int(rng, 0, rows - height);
  crop.left = uniform_int(rng, 0, cols - width);
  return crop;
}

Image resize_bilinear(const Image& src, int rows, int cols) {
  if (src.rows() < 1 || src.cols() < 1 || rows < 1 || cols < 1)
    throw ShapeError("resize_bilinear: empty image or target");
  Image out(rows, cols);
  const double sy = static_cast<double>(src.rows()) / rows;
  const double sx = static_cast<double>(src.cols()) / cols;
  const int max_r = static_cast<int>(src.rows()) - 1;
  const int max_c = static_cast<int>(src.cols()) - 1;

  std::vector<int> x0(cols), x1(cols);
  std::vector<double> wx(cols);
  for (int c = 0; c < cols; ++c) {
    const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_c));
    x0[c] = static_cast<int>(std::floor(fx));
    x1[c] = std::min(x0[c] + 1, max_c);
    wx[c] = fx - x0[c];
  }
  for (int r = 0; r < rows; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_r));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, max_r);
    const double wy = fy - y0;
    for (int c = 0; c < cols; ++c) {
      const double top = src(y0, x0[c]) * (1.0 - wx[c]) + src(y0, x1[c]) * wx[c];
      const double bot = src(y1, x0[c]) * (1.0 - wx[c]) + src(y1, x1[c]) * wx[c];
      out(r, c) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

Image prepare_seed_image(const Image& raw, const GridSpec& spec, const SeedCrop& seed,
                         PixelOffset inner_offset) {
  if (raw.rows() < kMinSeedSide || raw.cols() < kMinSeedSide) {
    std::ostringstream msg;
    msg << "prepare_seed_image: raw image must be at least " << kMinSeedSide << "x" << kMinSeedSide
        << ", got " << raw.rows() << "x" << raw.cols();
    throw ShapeError(msg.str());
  }
  if (seed.height < 1 || seed.width < 1 || seed.top < 0 || seed.left < 0 ||
      seed.top + seed.height > raw.rows() || seed.left + seed.width > raw.cols())
    throw ShapeError("prepare_seed_image: seed crop outside the raw image");
  if (inner_offset.row < 0 || inner_offset.row >= spec.m || inner_offset.col < 0 ||
      inner_offset.col >= spec.m)
    throw ConfigError("prepare_seed_image: inner offset outside [0, m)");

  const Image seed_img = raw.block(seed.top, seed.left, seed.height, seed.width);
  const Image outer = resize_bilinear(seed_img, spec.outer_side(), spec.outer_side());
  return outer.block(inner_offset.row, inner_offset.col, spec.inner_side(), spec.inner_side());
}

Image prepare_seed_image(const Image& raw, const GridSpec& spec, PixelOffset inner_offset,
                         Rng& rng) {
  if (raw.rows() < kMinSeedSide || raw.cols() < kMinSeedSide) {
    std::ostringstream msg;
    msg << "prepare_seed_image: raw image must be at least " << kMinSeedSide << "x" << kMinSeedSide
        << ", got " << raw.rows() << "x" << raw.cols();
    throw ShapeError(msg.str());
  }
  const SeedCrop seed = sample_seed_crop(static_cast<int>(raw.rows()), static_cast<int>(raw.cols()), rng);
  return prepare_seed_image(raw, spec, seed, inner_offset);
}

Matrix patchify(const Image& crop, int m) {
  if (m < 1 || crop.rows() % m != 0 || crop.cols() % m != 0)
    throw ShapeError("patchify: crop side not divisible by patch side");
  const int gr = static_cast<int>(crop.rows()) / m;
  const int gc = static_cast<int>(crop.cols()) / m;
  Matrix out(gr * gc, m * m);
  for (int r = 0; r < gr; ++r) {
    for (int c = 0; c < gc; ++c) {
      const int idx = r * gc + c;
      for (int y = 0; y < m; ++y)
        for (int x = 0; x < m; ++x) out(idx, y * m + x) = crop(r * m + y, c * m + x);
    }
  }
  return out;
}

Image unpatchify(const Matrix& patches, int grid_rows, int grid_cols, int m) {
  if (patches.rows() != grid_rows * grid_cols || patches.cols() != m * m)
    throw ShapeError("unpatchify: patch matrix does not match grid");
  Image out(grid_rows * m, grid_cols * m);
  for (int r = 0; r < grid_rows; ++r)
    for (int c = 0; c < grid_cols; ++c) {
      const int idx = r * grid_cols + c;
      for (int y = 0; y < m; ++y)
        for (int x = 0; x < m; ++x) out(r * m + y, c * m + x) = patches(idx, y * m + x);
    }
  return out;
}

}  // namespace peac
