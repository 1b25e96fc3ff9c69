#include "atlas/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "atlas/error.hpp"
#include "atlas/parallel.hpp"
#include "atlas/rng.hpp"
#include "atlas/vecmath.hpp"

namespace atlas {

EmbeddingMatrix random_unit_vectors(std::size_t n, std::uint32_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> data(n * dim);
  for (auto& v : data) v = static_cast<float>(rng.normal());
  return EmbeddingMatrix::from_unnormalized(dim, std::move(data));
}

std::vector<std::uint64_t> brute_force_knn(const EmbeddingMatrix& base, std::span<const float> query, std::size_t k) {
  if (query.size() != base.dim()) throw ValidationError("query dimension mismatch");
  std::vector<std::pair<double, std::uint64_t>> all(base.count());
  for (std::size_t i = 0; i < base.count(); ++i) all[i] = {l2_sq_exact(query.data(), base.row(i).data(), base.dim()), i};
  const auto take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + take, all.end());
  std::vector<std::uint64_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = all[i].second;
  return out;
}

nlohmann::json RecallReport::to_json() const {
  nlohmann::json curve_json = nlohmann::json::array();
  for (const auto& p : curve) curve_json.push_back({{"nprobe", p.nprobe}, {"recall", p.recall}, {"mean_ms", p.mean_ms}});
  return {{"n", n},
          {"queries", queries},
          {"k", k},
          {"nlist", params.nlist},
          {"m", params.m},
          {"rerank", rerank},
          {"build_seconds", build_seconds},
          {"curve", curve_json}};
}

RecallReport recall_bench(const EmbeddingMatrix& base, const EmbeddingMatrix& queries, const IvfPqParams& params,
                          std::span<const std::uint32_t> nprobes, std::size_t k, std::size_t rerank) {
  if (k == 0) throw ValidationError("k must be positive");
  RecallReport rep;
  rep.n = base.count();
  rep.queries = queries.count();
  rep.k = k;
  rep.params = params;
  rep.rerank = rerank;

  const auto t0 = std::chrono::steady_clock::now();
  auto index = IvfPqIndex::train(params, base);
  std::vector<std::uint64_t> ids(base.count());
  std::iota(ids.begin(), ids.end(), 0);
  index.add(ids, base);
  rep.build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::vector<std::vector<std::uint64_t>> truth(queries.count());
  parallel_for(0, queries.count(), [&](std::size_t q) { truth[q] = brute_force_knn(base, queries.row(q), k); });

  const auto lookup = [&](std::uint64_t id) { return base.row(id); };
  for (auto np : nprobes) {
    RecallPoint pt;
    pt.nprobe = np;
    double found = 0, ms = 0;
    for (std::size_t q = 0; q < queries.count(); ++q) {
      const auto s = std::chrono::steady_clock::now();
      const auto hits = rerank ? index.search_exact_rerank(queries.row(q), k, rerank, np, lookup)
                               : index.search(queries.row(q), k, np);
      ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s).count();
      std::unordered_set<std::uint64_t> got;
      for (const auto& h : hits) got.insert(h.id);
      for (auto t : truth[q]) found += got.count(t);
    }
    const auto nq = static_cast<double>(std::max<std::size_t>(1, queries.count()));
    pt.recall = found / (nq * static_cast<double>(k));
    pt.mean_ms = ms / nq;
    rep.curve.push_back(pt);
  }
  return rep;
}

}  // namespace atlas
