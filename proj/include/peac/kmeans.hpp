#pragma once

#include <cstdint>
#include <vector>

#include "peac/image.hpp"

namespace peac {

struct KMeansResult {
  Matrix centroids;         ///< k x d
  std::vector<int> labels;  ///< one per point
  double inertia = 0.0;     ///< sum of squared distances to the assigned centroid
  int iterations = 0;
};

/// Lloyd iterations from a k-means++ seeding drawn from (seed, Analysis).
/// Points are rows. Ties go to the lowest centroid index; an emptied cluster
/// is re-seeded with the point farthest from its centroid.
/// Throws ConfigError when k < 1 or k exceeds the number of points.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iterations = 100);

}  // namespace peac
