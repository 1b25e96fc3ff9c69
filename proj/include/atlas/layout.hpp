#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atlas/corpus.hpp"

namespace atlas {

struct LayoutParams {
  std::uint32_t n_neighbors = 15;
  double min_dist = 0.1;
  double spread = 1.0;
  std::uint32_t epochs = 200;
  std::uint32_t negative_samples = 5;
  double learning_rate = 1.0;  // decays linearly to 0 over the epochs
  std::uint64_t seed = 0x5eed;
  // Above this many rows the neighbour graph comes from an IVFPQ index with
  // exact re-rank instead of a full scan.
  std::size_t exact_knn_limit = 10000;

  void validate() const;
};

// Row-major float rows; no normalization requirement.
struct MatrixView {
  std::uint32_t dim = 0;
  std::size_t count = 0;
  std::span<const float> data;

  MatrixView() = default;
  MatrixView(std::uint32_t d, std::span<const float> values);
  MatrixView(const EmbeddingMatrix& m) : dim(m.dim()), count(m.count()), data(m.data()) {}  // NOLINT
  std::span<const float> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

// k nearest neighbours of every row, self excluded, ascending by (distance, index).
struct KnnGraph {
  std::uint32_t k = 0;
  std::vector<std::uint32_t> indices;  // n x k
  std::vector<float> distances;        // n x k, Euclidean
};

KnnGraph knn_graph(const MatrixView& x, std::uint32_t k, std::size_t exact_limit, std::uint64_t seed);

// Symmetric edge list of the fuzzy union graph, both directions present,
// sorted by (head, tail).
struct FuzzyGraph {
  std::vector<std::uint32_t> head;
  std::vector<std::uint32_t> tail;
  std::vector<float> weight;
};

// Per-point bandwidths are set so each point's outgoing weights sum to
// log2(k); the two directions of an edge combine as w1 + w2 - w1*w2.
FuzzyGraph fuzzy_graph(const KnnGraph& knn);

// Parameters of the low-dimensional similarity curve 1 / (1 + a d^(2b)),
// least-squares fitted to the min_dist/spread target.
struct CurveParams {
  double a = 0;
  double b = 0;
};
CurveParams fit_curve(double spread, double min_dist);

// 2D positions, one per row. One row maps to (0,0); otherwise at least
// n_neighbors + 1 rows are needed. Sequential SGD, so a fixed seed gives
// bit-identical output.
std::vector<Point2> layout(const MatrixView& x, const LayoutParams& params);

}  // namespace atlas
