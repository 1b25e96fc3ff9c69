#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <unordered_set>
#include <vector>

#include "atlas/corpus.hpp"

namespace atlas {

struct IvfPqParams {
  std::uint32_t nlist = 64;
  std::uint32_t m = 8;
  std::uint32_t bits_per_code = 8;  // fixed: 256 codewords per subquantizer
  std::uint32_t nprobe = 8;
  std::uint32_t train_iters = 25;
  std::uint64_t seed = 0x1f2f;

  static constexpr std::uint32_t kCodewords = 256;
  // Training subsamples beyond this many points per centroid.
  static constexpr std::size_t kMaxPointsPerCentroid = 256;

  void validate(std::uint32_t dim) const;
};

struct SearchHit {
  std::uint64_t id = 0;
  float score = 0;  // approximate squared L2 distance
  bool operator==(const SearchHit&) const = default;
};

// Largest of 16/8/4/2 dividing dim with at least 4 dims per subspace, else 1.
std::uint32_t default_subquantizers(std::uint32_t dim);

// Default result count for interactive search.
inline constexpr std::size_t kDefaultSearchK = 200;

// Inverted file over k-means cells, each entry a product-quantized residual
// (vector minus its cell centroid), one byte per subquantizer.
class IvfPqIndex {
 public:
  using VectorLookup = std::function<std::span<const float>(std::uint64_t id)>;

  // Trains coarse centroids on `sample` and the per-subspace codebooks on the
  // sample residuals. Throws ValidationError for a bad shape or too few points.
  static IvfPqIndex train(const IvfPqParams& params, const EmbeddingMatrix& sample);

  // Appends vectors under the given ids; ids must be new. Appends preserve
  // input order within each list.
  void add(std::span<const std::uint64_t> ids, const EmbeddingMatrix& vectors);

  // Probes params().nprobe cells (or the given nprobe) and scores by
  // asymmetric distance. Sorted ascending by (score, id).
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const;
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k, std::uint32_t nprobe) const;

  // PQ shortlist re-scored with full vectors. With nprobe == nlist and a
  // shortlist covering the corpus this is exact brute force.
  std::vector<SearchHit> search_exact_rerank(std::span<const float> query, std::size_t k, std::size_t shortlist,
                                             const VectorLookup& lookup) const;
  std::vector<SearchHit> search_exact_rerank(std::span<const float> query, std::size_t k, std::size_t shortlist,
                                             std::uint32_t nprobe, const VectorLookup& lookup) const;

  void save(const std::filesystem::path& path) const;
  static IvfPqIndex load(const std::filesystem::path& path);

  const IvfPqParams& params() const noexcept { return params_; }
  void set_nprobe(std::uint32_t nprobe);
  std::uint32_t dim() const noexcept { return dim_; }
  bool trained() const noexcept { return trained_; }
  std::size_t size() const noexcept { return id_set_.size(); }
  bool contains(std::uint64_t id) const { return id_set_.contains(id); }

  std::span<const float> coarse_centroids() const noexcept { return coarse_; }
  std::span<const float> codebooks() const noexcept { return codebooks_; }
  std::span<const std::uint64_t> list_ids(std::uint32_t list) const { return lists_.at(list).ids; }
  std::span<const std::uint8_t> list_codes(std::uint32_t list) const { return lists_.at(list).codes; }

  // Nearest coarse cell of a raw vector.
  std::uint32_t assign_list(std::span<const float> vec) const;
  // m-byte code of the residual of `vec` against cell `list`.
  std::vector<std::uint8_t> encode(std::span<const float> vec, std::uint32_t list) const;

 private:
  struct InvertedList {
    std::vector<std::uint64_t> ids;
    std::vector<std::uint8_t> codes;  // size = ids.size() * m
  };

  void check_query(std::span<const float> query) const;
  std::vector<std::uint32_t> probe_order(std::span<const float> query, std::uint32_t nprobe) const;

  IvfPqParams params_;
  std::uint32_t dim_ = 0;
  std::uint32_t dsub_ = 0;
  bool trained_ = false;
  std::vector<float> coarse_;     // nlist x dim
  std::vector<float> codebooks_;  // m x 256 x dsub
  std::vector<InvertedList> lists_;
  std::unordered_set<std::uint64_t> id_set_;
};

}  // namespace atlas
