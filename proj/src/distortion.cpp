#include "peac/distortion.hpp"

#include <algorithm>
#include <numeric>

#include "peac/errors.hpp"
#include "peac/geometry.hpp"

namespace peac {

namespace {

constexpr int kBezierSamples = 1001;

Rect random_rect(int rows, int cols, int min_side, int max_side, bool interior, Rng& rng) {
  Rect r;
  r.height = uniform_int(rng, min_side, max_side);
  r.width = uniform_int(rng, min_side, max_side);
  const int margin = interior ? 1 : 0;
  const int max_top = std::max(margin, rows - r.height - margin);
  const int max_left = std::max(margin, cols - r.width - margin);
  r.top = uniform_int(rng, std::min(margin, max_top), max_top);
  r.left = uniform_int(rng, std::min(margin, max_left), max_left);
  r.height = std::min(r.height, rows - r.top);
  r.width = std::min(r.width, cols - r.left);
  return r;
}

}  // namespace

std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  // Fisher-Yates with our own index draws so the sequence is stdlib-independent
  // apart from uniform_int.
  for (int i = n - 1; i > 0; --i) {
    const int j = uniform_int(rng, 0, i);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

std::vector<int> inverse_permutation(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

Image permute_patches(const Image& crop, int m, const std::vector<int>& perm) {
  const Matrix patches = patchify(crop, m);
  if (static_cast<Eigen::Index>(perm.size()) != patches.rows())
    throw ShapeError("permute_patches: permutation length does not match patch count");
  Matrix out(patches.rows(), patches.cols());
  for (Eigen::Index j = 0; j < patches.rows(); ++j) out.row(j) = patches.row(perm[static_cast<std::size_t>(j)]);
  return unpatchify(out, static_cast<int>(crop.rows()) / m, static_cast<int>(crop.cols()) / m, m);
}

Image local_pixel_shuffle(const Image& img, int window_rows, int window_cols, int count, Rng& rng) {
  Image out = img;
  const int rows = static_cast<int>(img.rows());
  const int cols = static_cast<int>(img.cols());
  if (window_rows < 1 || window_cols < 1 || window_rows > rows || window_cols > cols) return out;
  std::vector<double> buf(static_cast<std::size_t>(window_rows * window_cols));
  for (int w = 0; w < count; ++w) {
    const int top = uniform_int(rng, 0, rows - window_rows);
    const int left = uniform_int(rng, 0, cols - window_cols);
    std::size_t i = 0;
    for (int y = 0; y < window_rows; ++y)
      for (int x = 0; x < window_cols; ++x) buf[i++] = out(top + y, left + x);
    for (std::size_t a = buf.size(); a > 1; --a) {
      const auto b = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(a) - 1));
      std::swap(buf[a - 1], buf[b]);
    }
    i = 0;
    for (int y = 0; y < window_rows; ++y)
      for (int x = 0; x < window_cols; ++x) out(top + y, left + x) = buf[i++];
  }
  return out;
}

BezierCurve random_bezier(Rng& rng) {
  BezierCurve c;
  c.x = {0.0, uniform_real(rng, 0.0, 1.0), uniform_real(rng, 0.0, 1.0), 1.0};
  c.y = {0.0, uniform_real(rng, 0.0, 1.0), uniform_real(rng, 0.0, 1.0), 1.0};
  if (bernoulli(rng, 0.5)) {
    // Intensity inversion: the curve runs from (0,1) to (1,0).
    std::reverse(c.y.begin(), c.y.end());
  }
  return c;
}

Image bezier_remap(const Image& img, const BezierCurve& curve) {
  std::vector<std::pair<double, double>> pts(kBezierSamples);
  for (int i = 0; i < kBezierSamples; ++i) {
    const double t = static_cast<double>(i) / (kBezierSamples - 1);
    const double u = 1.0 - t;
    const double b0 = u * u * u, b1 = 3.0 * u * u * t, b2 = 3.0 * u * t * t, b3 = t * t * t;
    pts[static_cast<std::size_t>(i)] = {b0 * curve.x[0] + b1 * curve.x[1] + b2 * curve.x[2] + b3 * curve.x[3],
                                        b0 * curve.y[0] + b1 * curve.y[1] + b2 * curve.y[2] + b3 * curve.y[3]};
  }
  std::stable_sort(pts.begin(), pts.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  Image out(img.rows(), img.cols());
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double v = img(r, c);
      // Piecewise-linear interpolation, clamped at the ends.
      auto it = std::lower_bound(pts.begin(), pts.end(), v,
                                 [](const auto& p, double val) { return p.first < val; });
      double res;
      if (it == pts.begin()) {
        res = it->second;
      } else if (it == pts.end()) {
        res = pts.back().second;
      } else {
        const auto& hi = *it;
        const auto& lo = *(it - 1);
        const double span = hi.first - lo.first;
        const double w = span > 0.0 ? (v - lo.first) / span : 0.0;
        res = lo.second + w * (hi.second - lo.second);
      }
      out(r, c) = std::clamp(res, 0.0, 1.0);
    }
  }
  return out;
}

Image inpaint(const Image& img, const std::vector<Rect>& rects, Rng& rng) {
  Image out = img;
  for (const Rect& r : rects)
    for (int y = r.top; y < r.top + r.height; ++y)
      for (int x = r.left; x < r.left + r.width; ++x) out(y, x) = uniform_real(rng, 0.0, 1.0);
  return out;
}

Image outpaint(const Image& img, const std::vector<Rect>& keep, Rng& rng) {
  Image out(img.rows(), img.cols());
  for (Eigen::Index y = 0; y < img.rows(); ++y)
    for (Eigen::Index x = 0; x < img.cols(); ++x) out(y, x) = uniform_real(rng, 0.0, 1.0);
  for (const Rect& r : keep) out.block(r.top, r.left, r.height, r.width) = img.block(r.top, r.left, r.height, r.width);
  return out;
}

Image apply_appearance_distortion(const Image& crop, int m, Rng& rng, std::vector<std::string>* log) {
  const int rows = static_cast<int>(crop.rows());
  const int cols = static_cast<int>(crop.cols());
  bool shuffle = bernoulli(rng, 0.5);
  bool remap = bernoulli(rng, 0.5);
  bool paint = bernoulli(rng, 0.5);
  bool in_paint = bernoulli(rng, 0.5);
  if (!shuffle && !remap && !paint) {
    switch (uniform_int(rng, 0, 3)) {
      case 0: shuffle = true; break;
      case 1: remap = true; break;
      case 2: paint = true; in_paint = true; break;
      default: paint = true; in_paint = false; break;
    }
  }

  Image out = crop;
  if (shuffle) {
    const int max_window = std::max(1, m / 2);
    const int windows = std::max(1, (rows * cols) / (m * m));
    for (int w = 0; w < windows; ++w) {
      out = local_pixel_shuffle(out, uniform_int(rng, 1, max_window), uniform_int(rng, 1, max_window), 1, rng);
    }
    if (log) log->emplace_back("local_shuffle");
  }
  if (remap) {
    out = bezier_remap(out, random_bezier(rng));
    if (log) log->emplace_back("bezier_remap");
  }
  if (paint) {
    if (in_paint) {
      std::vector<Rect> rects;
      const int count = uniform_int(rng, 1, 5);
      for (int i = 0; i < count; ++i)
        rects.push_back(random_rect(rows, cols, std::max(1, rows / 8), std::max(1, rows / 4), true, rng));
      out = inpaint(out, rects, rng);
      if (log) log->emplace_back("inpaint");
    } else {
      std::vector<Rect> keep;
      const int count = uniform_int(rng, 1, 3);
      for (int i = 0; i < count; ++i)
        keep.push_back(random_rect(rows, cols, std::max(1, rows / 4), std::max(1, rows / 2), false, rng));
      out = outpaint(out, keep, rng);
      if (log) log->emplace_back("outpaint");
    }
  }
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

DistortedCrop maybe_distort(const Image& crop, int m, Rng& rng, const DistortionConfig& config) {
  if (m < 1 || crop.rows() % m != 0 || crop.cols() % m != 0)
    throw ShapeError("maybe_distort: crop side not divisible by patch side");
  const int tokens = static_cast<int>((crop.rows() / m) * (crop.cols() / m));

  // Both coins are always flipped so the stream position does not depend on p.
  const bool od = bernoulli(rng, config.p_od);
  const bool ad = bernoulli(rng, config.p_ad);

  DistortedCrop out;
  out.record.original_crop = crop;
  out.record.od_applied = od;
  out.record.ad_applied = ad;
  out.crop = crop;
  if (ad) out.crop = apply_appearance_distortion(out.crop, m, rng, &out.record.ad_log);
  if (od) {
    out.record.permutation = random_permutation(tokens, rng);
    out.crop = permute_patches(out.crop, m, out.record.permutation);
  } else {
    out.record.permutation.resize(static_cast<std::size_t>(tokens));
    std::iota(out.record.permutation.begin(), out.record.permutation.end(), 0);
  }
  return out;
}

}  // namespace peac
