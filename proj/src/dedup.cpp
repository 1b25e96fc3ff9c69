#include "atlas/dedup.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "atlas/error.hpp"
#include "atlas/ivfpq.hpp"
#include "atlas/parallel.hpp"
#include "atlas/vecmath.hpp"

namespace atlas {

namespace {

std::vector<std::size_t> exact_sweep(const EmbeddingMatrix& matrix, float threshold) {
  const std::uint32_t dim = matrix.dim();
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < matrix.count(); ++i) {
    const float* row = matrix.row(i).data();
    bool duplicate = false;
    for (std::size_t s : survivors) {
      if (dot(row, matrix.row(s).data(), dim) > threshold) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) survivors.push_back(i);
  }
  return survivors;
}

std::vector<std::size_t> ann_sweep(const EmbeddingMatrix& matrix, const DedupParams& params) {
  const std::size_t n = matrix.count();
  const std::uint32_t dim = matrix.dim();
  IvfPqParams ip;
  ip.nlist = static_cast<std::uint32_t>(std::clamp<double>(std::sqrt(static_cast<double>(n)) / 4.0, 1.0, 1024.0));
  ip.m = default_subquantizers(dim);
  ip.nprobe = ip.nlist;
  ip.seed = params.seed;
  auto index = IvfPqIndex::train(ip, matrix);
  std::vector<std::uint64_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  index.add(ids, matrix);

  // Candidate neighbours per row, confirmed by exact dot product.
  std::vector<std::vector<std::size_t>> near(n);
  parallel_for(0, n, [&](std::size_t i) {
    auto row = matrix.row(i);
    for (const auto& hit : index.search(row, params.neighbors + 1)) {
      const auto j = static_cast<std::size_t>(hit.id);
      if (j != i && dot(row.data(), matrix.row(j).data(), dim) > params.cos_threshold) near[i].push_back(j);
    }
  });
  // Symmetrize: a pair found from either side counts.
  std::vector<std::vector<std::size_t>> earlier(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : near[i]) {
      if (j < i) earlier[i].push_back(j);
      else earlier[j].push_back(i);
    }

  std::vector<char> alive(n, 0);
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < n; ++i) {
    const bool duplicate =
        std::any_of(earlier[i].begin(), earlier[i].end(), [&](std::size_t j) { return alive[j] != 0; });
    if (!duplicate) {
      alive[i] = 1;
      survivors.push_back(i);
    }
  }
  return survivors;
}

}  // namespace

void DedupParams::validate() const {
  if (neighbors < 1) throw ValidationError("dedup neighbors must be >= 1");
  if (!(cos_threshold > 0.0f && cos_threshold <= 1.0f)) throw ValidationError("cos_threshold must be in (0, 1]");
}

std::vector<std::size_t> dedup(const EmbeddingMatrix& matrix, const DedupParams& params) {
  params.validate();
  if (params.exact || matrix.count() < DedupParams::kMinAnnRows) return exact_sweep(matrix, params.cos_threshold);
  return ann_sweep(matrix, params);
}

DiversityCurve diversity_curve(std::span<const std::string> texts, std::span<const std::size_t> checkpoints,
                               const EmbedderSpec& spec, const DedupParams& params) {
  if (texts.empty()) throw ValidationError("diversity curve needs at least one text");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i] > texts.size())
      throw ValidationError("checkpoint " + std::to_string(checkpoints[i]) + " exceeds " +
                            std::to_string(texts.size()) + " texts");
    if (i > 0 && checkpoints[i] <= checkpoints[i - 1]) throw ValidationError("checkpoints must be ascending");
  }
  const auto all = embed_batch(spec, texts);
  DiversityCurve curve;
  curve.sample_counts.assign(checkpoints.begin(), checkpoints.end());
  if (params.exact) {
    // The exact sweep is prefix-stable: dedup of a prefix is the prefix of the
    // full survivor list.
    const auto survivors = dedup(all, params);
    for (std::size_t c : checkpoints)
      curve.unique_counts.push_back(static_cast<std::size_t>(
          std::lower_bound(survivors.begin(), survivors.end(), c) - survivors.begin()));
    return curve;
  }
  for (std::size_t c : checkpoints) {
    if (c == 0) {
      curve.unique_counts.push_back(0);
      continue;
    }
    std::vector<float> prefix(all.data().begin(), all.data().begin() + static_cast<std::ptrdiff_t>(c * all.dim()));
    curve.unique_counts.push_back(dedup(EmbeddingMatrix(all.dim(), std::move(prefix)), params).size());
  }
  return curve;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t tokens = 0;
  bool in_token = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_token) ++tokens;
    in_token = !space;
  }
  return tokens;
}

LengthStats length_stats(std::span<const std::string> prompts) {
  LengthStats stats;
  stats.count = prompts.size();
  if (prompts.empty()) return stats;
  std::vector<std::size_t> lengths(prompts.size());
  double sum = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    lengths[i] = count_tokens(prompts[i]);
    sum += static_cast<double>(lengths[i]);
  }
  stats.mean = sum / static_cast<double>(prompts.size());
  double sq = 0;
  for (auto len : lengths) {
    const double d = static_cast<double>(len) - stats.mean;
    sq += d * d;
  }
  stats.stddev = std::sqrt(sq / static_cast<double>(prompts.size()));
  stats.histogram.assign(*std::max_element(lengths.begin(), lengths.end()) + 1, 0);
  for (auto len : lengths) ++stats.histogram[len];
  return stats;
}

}  // namespace atlas
