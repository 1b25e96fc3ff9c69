#include "atlas/ivfpq.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>

#include "atlas/binio.hpp"
#include "atlas/error.hpp"
#include "atlas/hash.hpp"
#include "atlas/kmeans.hpp"
#include "atlas/parallel.hpp"
#include "atlas/rng.hpp"
#include "atlas/vecmath.hpp"

namespace atlas {

std::uint32_t default_subquantizers(std::uint32_t dim) {
  for (std::uint32_t m : {16u, 8u, 4u, 2u}) {
    if (dim % m == 0 && dim / m >= 4) return m;
  }
  return 1;
}

namespace {

constexpr std::uint32_t kIndexFormatVersion = 1;

bool hit_less(const SearchHit& a, const SearchHit& b) {
  return a.score < b.score || (a.score == b.score && a.id < b.id);
}

// Seeded subsample of at most `limit` row indices, returned in ascending order.
std::vector<std::size_t> subsample(std::size_t n, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= limit) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < limit; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

void IvfPqParams::validate(std::uint32_t dim) const {
  if (nlist < 1) throw ValidationError("nlist must be >= 1");
  if (m < 1 || dim % m != 0)
    throw ValidationError("dim " + std::to_string(dim) + " is not divisible by m=" + std::to_string(m));
  if (bits_per_code != 8) throw ValidationError("bits_per_code is fixed at 8");
  if (nprobe < 1 || nprobe > nlist) throw ValidationError("nprobe must be in [1, nlist]");
}

IvfPqIndex IvfPqIndex::train(const IvfPqParams& params, const EmbeddingMatrix& sample) {
  const std::uint32_t dim = sample.dim();
  params.validate(dim);
  const std::size_t n = sample.count();
  const std::size_t needed = std::max<std::size_t>(params.nlist, IvfPqParams::kCodewords);
  if (n < needed)
    throw ValidationError("training needs at least " + std::to_string(needed) + " vectors, got " +
                          std::to_string(n));
  if (n < needed * 4)
    spdlog::warn("ivfpq: training on {} vectors; at least {} recommended", n, needed * 4);

  IvfPqIndex index;
  index.params_ = params;
  index.dim_ = dim;
  index.dsub_ = dim / params.m;
  index.lists_.resize(params.nlist);

  auto gather = [&](const std::vector<std::size_t>& rows) {
    std::vector<float> out(rows.size() * dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto r = sample.row(rows[i]);
      std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return out;
  };

  const auto coarse_rows =
      subsample(n, IvfPqParams::kMaxPointsPerCentroid * params.nlist, hash_combine({params.seed, 1}));
  auto coarse =
      kmeans(gather(coarse_rows), dim, {params.nlist, params.train_iters, hash_combine({params.seed, 2})});
  index.coarse_ = std::move(coarse.centroids);

  const auto pq_rows = subsample(n, IvfPqParams::kMaxPointsPerCentroid * IvfPqParams::kCodewords,
                                 hash_combine({params.seed, 3}));
  auto residuals = gather(pq_rows);
  parallel_for(0, pq_rows.size(), [&](std::size_t i) {
    float* r = residuals.data() + i * dim;
    const auto c = nearest_centroid(r, index.coarse_, dim);
    const float* cen = index.coarse_.data() + static_cast<std::size_t>(c) * dim;
    for (std::uint32_t j = 0; j < dim; ++j) r[j] -= cen[j];
  });

  const std::uint32_t dsub = index.dsub_;
  index.codebooks_.resize(static_cast<std::size_t>(params.m) * IvfPqParams::kCodewords * dsub);
  std::vector<float> sub(pq_rows.size() * dsub);
  for (std::uint32_t q = 0; q < params.m; ++q) {
    for (std::size_t i = 0; i < pq_rows.size(); ++i)
      std::copy_n(residuals.data() + i * dim + static_cast<std::size_t>(q) * dsub, dsub, sub.data() + i * dsub);
    auto book = kmeans(sub, dsub, {IvfPqParams::kCodewords, params.train_iters, hash_combine({params.seed, 4, q})});
    std::copy(book.centroids.begin(), book.centroids.end(),
              index.codebooks_.begin() + static_cast<std::ptrdiff_t>(q) * IvfPqParams::kCodewords * dsub);
  }
  index.trained_ = true;
  return index;
}

std::uint32_t IvfPqIndex::assign_list(std::span<const float> vec) const {
  check_query(vec);
  return nearest_centroid(vec.data(), coarse_, dim_);
}

std::vector<std::uint8_t> IvfPqIndex::encode(std::span<const float> vec, std::uint32_t list) const {
  check_query(vec);
  std::vector<float> residual(dim_);
  const float* cen = coarse_.data() + static_cast<std::size_t>(list) * dim_;
  for (std::uint32_t j = 0; j < dim_; ++j) residual[j] = vec[j] - cen[j];
  std::vector<std::uint8_t> code(params_.m);
  const std::size_t book_stride = static_cast<std::size_t>(IvfPqParams::kCodewords) * dsub_;
  for (std::uint32_t q = 0; q < params_.m; ++q) {
    code[q] = static_cast<std::uint8_t>(nearest_centroid(
        residual.data() + static_cast<std::size_t>(q) * dsub_,
        std::span<const float>(codebooks_).subspan(q * book_stride, book_stride), dsub_));
  }
  return code;
}

void IvfPqIndex::add(std::span<const std::uint64_t> ids, const EmbeddingMatrix& vectors) {
  if (!trained_) throw ValidationError("cannot add to an untrained index");
  if (vectors.dim() != dim_) throw ValidationError("vector dim mismatch on add");
  if (ids.size() != vectors.count()) throw ValidationError("id count does not match vector count");
  std::unordered_set<std::uint64_t> batch;
  for (auto id : ids)
    if (id_set_.contains(id) || !batch.insert(id).second)
      throw ValidationError("duplicate id " + std::to_string(id));

  const std::uint32_t m = params_.m;
  std::vector<std::uint32_t> lists(ids.size());
  std::vector<std::uint8_t> codes(ids.size() * m);
  parallel_for(0, ids.size(), [&](std::size_t i) {
    auto v = vectors.row(i);
    lists[i] = nearest_centroid(v.data(), coarse_, dim_);
    auto code = encode(v, lists[i]);
    std::copy(code.begin(), code.end(), codes.begin() + static_cast<std::ptrdiff_t>(i * m));
  });
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto& list = lists_[lists[i]];
    list.ids.push_back(ids[i]);
    list.codes.insert(list.codes.end(), codes.begin() + static_cast<std::ptrdiff_t>(i * m),
                      codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * m));
    id_set_.insert(ids[i]);
  }
}

void IvfPqIndex::check_query(std::span<const float> query) const {
  if (!trained_) throw ValidationError("index is not trained");
  if (query.size() != dim_)
    throw ValidationError("query has dim " + std::to_string(query.size()) + ", index has " + std::to_string(dim_));
}

void IvfPqIndex::set_nprobe(std::uint32_t nprobe) {
  if (nprobe < 1 || nprobe > params_.nlist) throw ValidationError("nprobe must be in [1, nlist]");
  params_.nprobe = nprobe;
}

std::vector<std::uint32_t> IvfPqIndex::probe_order(std::span<const float> query, std::uint32_t nprobe) const {
  std::vector<std::pair<float, std::uint32_t>> cells(params_.nlist);
  for (std::uint32_t c = 0; c < params_.nlist; ++c)
    cells[c] = {l2_sq(query.data(), coarse_.data() + static_cast<std::size_t>(c) * dim_, dim_), c};
  std::partial_sort(cells.begin(), cells.begin() + nprobe, cells.end());
  std::vector<std::uint32_t> out(nprobe);
  for (std::uint32_t i = 0; i < nprobe; ++i) out[i] = cells[i].second;
  return out;
}

std::vector<SearchHit> IvfPqIndex::search(std::span<const float> query, std::size_t k) const {
  return search(query, k, params_.nprobe);
}

std::vector<SearchHit> IvfPqIndex::search(std::span<const float> query, std::size_t k, std::uint32_t nprobe) const {
  check_query(query);
  if (k < 1) throw ValidationError("k must be >= 1");
  if (nprobe < 1 || nprobe > params_.nlist) throw ValidationError("nprobe must be in [1, nlist]");

  const std::uint32_t m = params_.m;
  constexpr std::uint32_t kc = IvfPqParams::kCodewords;
  std::vector<float> table(static_cast<std::size_t>(m) * kc);
  std::vector<float> residual(dim_);
  // Max-heap on (score, id): the top is the worst hit kept so far.
  std::priority_queue<SearchHit, std::vector<SearchHit>, decltype(&hit_less)> heap(&hit_less);

  for (std::uint32_t cell : probe_order(query, nprobe)) {
    const auto& list = lists_[cell];
    if (list.ids.empty()) continue;
    const float* cen = coarse_.data() + static_cast<std::size_t>(cell) * dim_;
    for (std::uint32_t j = 0; j < dim_; ++j) residual[j] = query[j] - cen[j];
    for (std::uint32_t q = 0; q < m; ++q) {
      const float* sub = residual.data() + static_cast<std::size_t>(q) * dsub_;
      const float* book = codebooks_.data() + static_cast<std::size_t>(q) * kc * dsub_;
      float* row = table.data() + static_cast<std::size_t>(q) * kc;
      for (std::uint32_t w = 0; w < kc; ++w) row[w] = l2_sq(sub, book + static_cast<std::size_t>(w) * dsub_, dsub_);
    }
    const std::uint8_t* code = list.codes.data();
    for (std::size_t e = 0; e < list.ids.size(); ++e, code += m) {
      float score = 0;
      for (std::uint32_t q = 0; q < m; ++q) score += table[static_cast<std::size_t>(q) * kc + code[q]];
      const SearchHit hit{list.ids[e], score};
      if (heap.size() < k) {
        heap.push(hit);
      } else if (hit_less(hit, heap.top())) {
        heap.pop();
        heap.push(hit);
      }
    }
  }
  std::vector<SearchHit> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

std::vector<SearchHit> IvfPqIndex::search_exact_rerank(std::span<const float> query, std::size_t k,
                                                       std::size_t shortlist, const VectorLookup& lookup) const {
  return search_exact_rerank(query, k, shortlist, params_.nprobe, lookup);
}

std::vector<SearchHit> IvfPqIndex::search_exact_rerank(std::span<const float> query, std::size_t k,
                                                       std::size_t shortlist, std::uint32_t nprobe,
                                                       const VectorLookup& lookup) const {
  if (k < 1) throw ValidationError("k must be >= 1");
  auto candidates = search(query, std::max(k, shortlist), nprobe);
  std::vector<std::pair<double, std::uint64_t>> exact;
  exact.reserve(candidates.size());
  for (const auto& c : candidates) {
    auto v = lookup(c.id);
    if (v.size() != dim_) throw ValidationError("lookup returned a vector of the wrong dim for id " + std::to_string(c.id));
    exact.emplace_back(l2_sq_exact(query.data(), v.data(), dim_), c.id);
  }
  const std::size_t keep = std::min(k, exact.size());
  std::partial_sort(exact.begin(), exact.begin() + static_cast<std::ptrdiff_t>(keep), exact.end());
  std::vector<SearchHit> out(keep);
  for (std::size_t i = 0; i < keep; ++i) out[i] = {exact[i].second, static_cast<float>(exact[i].first)};
  return out;
}

void IvfPqIndex::save(const std::filesystem::path& path) const {
  if (!trained_) throw ValidationError("cannot save an untrained index");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    binio::put_magic(out, "PIDX");
    binio::put<std::uint32_t>(out, kIndexFormatVersion);
    binio::put<std::uint32_t>(out, dim_);
    binio::put<std::uint32_t>(out, params_.nlist);
    binio::put<std::uint32_t>(out, params_.m);
    binio::put<std::uint32_t>(out, params_.bits_per_code);
    binio::put<std::uint32_t>(out, params_.nprobe);
    binio::put<std::uint32_t>(out, params_.train_iters);
    binio::put<std::uint64_t>(out, params_.seed);
    binio::put_span<float>(out, coarse_);
    binio::put_span<float>(out, codebooks_);
    for (const auto& list : lists_) {
      binio::put<std::uint64_t>(out, list.ids.size());
      for (std::size_t e = 0; e < list.ids.size(); ++e) {
        binio::put<std::uint64_t>(out, list.ids[e]);
        out.write(reinterpret_cast<const char*>(list.codes.data() + e * params_.m), params_.m);
      }
    }
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move index into place: " + ec.message());
}

IvfPqIndex IvfPqIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  binio::expect_magic(in, "PIDX");
  const auto version = binio::get<std::uint32_t>(in, "version");
  if (version != kIndexFormatVersion) throw FormatError("unsupported index version " + std::to_string(version));
  IvfPqIndex index;
  index.dim_ = binio::get<std::uint32_t>(in, "dim");
  index.params_.nlist = binio::get<std::uint32_t>(in, "nlist");
  index.params_.m = binio::get<std::uint32_t>(in, "m");
  index.params_.bits_per_code = binio::get<std::uint32_t>(in, "bits");
  index.params_.nprobe = binio::get<std::uint32_t>(in, "nprobe");
  index.params_.train_iters = binio::get<std::uint32_t>(in, "train_iters");
  index.params_.seed = binio::get<std::uint64_t>(in, "seed");
  try {
    index.params_.validate(index.dim_);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("index params: ") + e.what());
  }
  index.dsub_ = index.dim_ / index.params_.m;
  index.coarse_.resize(static_cast<std::size_t>(index.params_.nlist) * index.dim_);
  binio::get_span(in, std::span<float>(index.coarse_), "coarse centroids");
  index.codebooks_.resize(static_cast<std::size_t>(index.params_.m) * IvfPqParams::kCodewords * index.dsub_);
  binio::get_span(in, std::span<float>(index.codebooks_), "codebooks");
  index.lists_.resize(index.params_.nlist);
  const std::uint32_t m = index.params_.m;
  for (auto& list : index.lists_) {
    const auto len = binio::get<std::uint64_t>(in, "list length");
    list.ids.resize(len);
    list.codes.resize(len * m);
    for (std::uint64_t e = 0; e < len; ++e) {
      list.ids[e] = binio::get<std::uint64_t>(in, "list id");
      binio::get_span(in, std::span<std::uint8_t>(list.codes.data() + e * m, m), "code");
      if (!index.id_set_.insert(list.ids[e]).second)
        throw FormatError("id " + std::to_string(list.ids[e]) + " appears twice in index");
    }
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw FormatError("trailing bytes after index payload");
  index.trained_ = true;
  return index;
}

}  // namespace atlas
