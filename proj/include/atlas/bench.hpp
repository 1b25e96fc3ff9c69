#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "atlas/corpus.hpp"
#include "atlas/ivfpq.hpp"

namespace atlas {

// n rows of normalized Gaussian noise.
EmbeddingMatrix random_unit_vectors(std::size_t n, std::uint32_t dim, std::uint64_t seed);

// Exact k nearest rows by squared L2 (double accumulation), ties by row.
std::vector<std::uint64_t> brute_force_knn(const EmbeddingMatrix& base, std::span<const float> query, std::size_t k);

struct RecallPoint {
  std::uint32_t nprobe = 0;
  double recall = 0;        // mean |approx top-k ∩ exact top-k| / k
  double mean_ms = 0;
};

struct RecallReport {
  std::size_t n = 0;
  std::size_t queries = 0;
  std::size_t k = 0;
  IvfPqParams params;
  std::size_t rerank = 0;  // 0: plain ADC ranking
  double build_seconds = 0;
  std::vector<RecallPoint> curve;
  nlohmann::json to_json() const;
};

// Recall@k of the index against brute force for every nprobe. With rerank > 0
// the PQ shortlist of that size is re-scored exactly.
RecallReport recall_bench(const EmbeddingMatrix& base, const EmbeddingMatrix& queries, const IvfPqParams& params,
                          std::span<const std::uint32_t> nprobes, std::size_t k, std::size_t rerank);

}  // namespace atlas
