#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace atlas {

struct KMeansParams {
  std::uint32_t k = 1;
  std::uint32_t iters = 25;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<float> centroids;          // k x dim, row-major
  std::vector<std::uint32_t> assignment;  // per input point
  double inertia = 0;                     // sum of squared distances at the end
};

// Lloyd's algorithm with k-means++ seeding. An empty cluster is repaired by
// splitting the most populous one. Centroid sums accumulate in double, so a
// cluster of identical points has exactly that point as centroid.
// Deterministic for a fixed seed. Throws ValidationError if n < k.
KMeansResult kmeans(std::span<const float> points, std::uint32_t dim, const KMeansParams& params);

// Index of the nearest centroid by squared L2; ties go to the lower index.
std::uint32_t nearest_centroid(const float* x, std::span<const float> centroids, std::uint32_t dim);

}  // namespace atlas
