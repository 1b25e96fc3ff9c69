#include "atlas/kmeans.hpp"

#include <algorithm>
#include <limits>

#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/rng.hpp"
#include "atlas/vecmath.hpp"

namespace atlas {

std::uint32_t nearest_centroid(const float* x, std::span<const float> centroids, std::uint32_t dim) {
  const std::size_t k = centroids.size() / dim;
  std::uint32_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    const float d = l2_sq(x, centroids.data() + c * dim, dim);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(c);
    }
  }
  return best;
}

namespace {

std::vector<float> plus_plus_init(std::span<const float> points, std::size_t n, std::uint32_t dim,
                                  std::uint32_t k, Rng& rng) {
  std::vector<float> centroids(static_cast<std::size_t>(k) * dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::uint32_t c = 0; c < k; ++c) {
    std::copy_n(points.data() + pick * dim, dim, centroids.data() + static_cast<std::size_t>(c) * dim);
    if (c + 1 == k) break;
    const float* cen = centroids.data() + static_cast<std::size_t>(c) * dim;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min<double>(d2[i], l2_sq(points.data() + i * dim, cen, dim));
      total += d2[i];
    }
    if (total <= 0) {
      // All remaining mass is on existing centroids (duplicate points).
      pick = rng.below(n);
      continue;
    }
    double target = rng.uniform() * total;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      target -= d2[i];
      if (target < 0) {
        pick = i;
        break;
      }
    }
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(std::span<const float> points, std::uint32_t dim, const KMeansParams& params) {
  if (dim == 0 || points.size() % dim != 0) throw ValidationError("kmeans: bad point matrix shape");
  const std::size_t n = points.size() / dim;
  const std::uint32_t k = params.k;
  if (k == 0) throw ValidationError("kmeans: k must be >= 1");
  if (n < k)
    throw ValidationError("kmeans: " + std::to_string(n) + " points cannot seed " + std::to_string(k) + " centroids");

  Rng rng(params.seed);
  KMeansResult result;
  result.centroids = plus_plus_init(points, n, dim, k, rng);
  result.assignment.assign(n, 0);
  std::vector<float> dist(n);
  std::vector<double> sums(static_cast<std::size_t>(k) * dim);
  std::vector<std::size_t> counts(k);

  auto assign = [&] {
    parallel_for(0, n, [&](std::size_t i) {
      const float* x = points.data() + i * dim;
      const auto c = nearest_centroid(x, result.centroids, dim);
      result.assignment[i] = c;
      dist[i] = l2_sq(x, result.centroids.data() + static_cast<std::size_t>(c) * dim, dim);
    });
  };

  for (std::uint32_t it = 0; it < params.iters; ++it) {
    assign();
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = result.assignment[i];
      ++counts[c];
      const float* x = points.data() + i * dim;
      double* s = sums.data() + static_cast<std::size_t>(c) * dim;
      for (std::uint32_t j = 0; j < dim; ++j) s[j] += x[j];
    }
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      float* cen = result.centroids.data() + static_cast<std::size_t>(c) * dim;
      const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
      for (std::uint32_t j = 0; j < dim; ++j) cen[j] = static_cast<float>(s[j] / static_cast<double>(counts[c]));
    }
    // Split the largest cluster into every empty one, with a symmetric
    // perturbation so the two halves separate on the next assignment.
    for (std::uint32_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const auto largest = static_cast<std::uint32_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      if (counts[largest] < 2) continue;
      float* src = result.centroids.data() + static_cast<std::size_t>(largest) * dim;
      float* dst = result.centroids.data() + static_cast<std::size_t>(c) * dim;
      constexpr float kEps = 1.0f / 1024.0f;
      for (std::uint32_t j = 0; j < dim; ++j) {
        const float step = (j % 2 == 0 ? kEps : -kEps) * std::max(1e-3f, std::abs(src[j]));
        dst[j] = src[j] + step;
        src[j] = src[j] - step;
      }
      counts[c] = counts[largest] / 2;
      counts[largest] -= counts[c];
    }
  }
  assign();
  result.inertia = 0;
  for (float d : dist) result.inertia += d;
  return result;
}

}  // namespace atlas
