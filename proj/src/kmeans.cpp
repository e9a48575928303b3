#include "peac/kmeans.hpp"

#include <limits>

#include "peac/errors.hpp"
#include "peac/rng.hpp"

namespace peac {

namespace {

int nearest(const Matrix& centroids, const Eigen::Ref<const RowVector>& p, double& dist) {
  int best = 0;
  dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - p).squaredNorm();
    if (d < dist) {
      dist = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iterations) {
  const Eigen::Index n = points.rows();
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (k > n) throw ConfigError("kmeans: k exceeds the number of points");
  Rng rng = make_rng(seed, Stream::Analysis, 0x6b6d);

  KMeansResult r;
  r.centroids.resize(k, points.cols());
  r.centroids.row(0) = points.row(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (points.row(i) - r.centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = uniform_real(rng, 0.0, total);
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2(pick);
        if (u < 0.0) break;
      }
      // Skip zero-weight points that floating slack may land on.
      while (d2(pick) == 0.0 && pick > 0) --pick;
    } else {
      (void)uniform_real(rng, 0.0, 1.0);
    }
    r.centroids.row(c) = points.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (points.row(i) - r.centroids.row(c)).squaredNorm());
  }

  r.labels.assign(static_cast<std::size_t>(n), -1);
  for (r.iterations = 0; r.iterations < max_iterations; ++r.iterations) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d;
      const int c = nearest(r.centroids, points.row(i), d);
      if (c != r.labels[static_cast<std::size_t>(i)]) {
        r.labels[static_cast<std::size_t>(i)] = c;
        changed = true;
      }
    }
    if (!changed) break;

    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = r.labels[static_cast<std::size_t>(i)];
      sums.row(c) += points.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        r.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double d = (points.row(i) - r.centroids.row(r.labels[static_cast<std::size_t>(i)])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      r.centroids.row(c) = points.row(far);
    }
  }

  r.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double d;
    r.labels[static_cast<std::size_t>(i)] = nearest(r.centroids, points.row(i), d);
    r.inertia += d;
  }
  return r;
}

}  // namespace peac
