#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atlas/corpus.hpp"
#include "atlas/embedder.hpp"

namespace atlas {

struct DedupParams {
  std::size_t neighbors = 200;
  float cos_threshold = 0.7f;
  // Brute-force candidate scan. Approximate mode still falls back to it for
  // matrices too small to train an index on (fewer than kMinAnnRows rows).
  bool exact = false;
  std::uint64_t seed = 0xd3d0;

  static constexpr std::size_t kMinAnnRows = 1024;

  void validate() const;
};

// Greedy first-occurrence-wins sweep in ascending row order: a row survives
// iff no earlier survivor has cosine similarity above the threshold with it.
// Returns surviving row indices, ascending.
std::vector<std::size_t> dedup(const EmbeddingMatrix& matrix, const DedupParams& params);

struct DiversityCurve {
  std::vector<std::size_t> sample_counts;
  std::vector<std::size_t> unique_counts;
};

// Unique-sample count after dedup of each prefix texts[0..c).
DiversityCurve diversity_curve(std::span<const std::string> texts, std::span<const std::size_t> checkpoints,
                               const EmbedderSpec& spec, const DedupParams& params);

struct LengthStats {
  std::size_t count = 0;
  double mean = 0;
  double stddev = 0;                  // population
  std::vector<std::size_t> histogram;  // histogram[t] = prompts with t tokens
};

// Tokens are maximal runs of non-whitespace.
std::size_t count_tokens(std::string_view text);
LengthStats length_stats(std::span<const std::string> prompts);

}  // namespace atlas
