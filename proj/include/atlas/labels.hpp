#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "atlas/corpus.hpp"
#include "atlas/text_backend.hpp"

namespace atlas {

struct LabelAnchor {
  Point2 position;
  std::string text;
  std::uint32_t rank = 0;  // 1 = most prominent
  double min_zoom = 0;
  std::size_t population = 0;  // records closest to this anchor
  bool operator==(const LabelAnchor&) const = default;
};

// Records whose subjects feed each anchor's label.
inline constexpr std::size_t kLabelNeighbors = 20;

// Zoom at which a rank-r anchor appears: log2(r + 1) mapped so rank 1 shows
// from zoom 0 and rank `count` from kLabelZoomSpan.
inline constexpr double kLabelZoomSpan = 6.0;
double label_min_zoom(std::uint32_t rank, std::uint32_t count);

// Anchors at the k-means centroids of the positions, labelled by the backend
// from the subjects of the kLabelNeighbors nearest records and ranked by
// population. Throws ValidationError when k_anchors exceeds the number of
// distinct positions.
std::vector<LabelAnchor> place_labels(std::span<const Point2> positions, std::span<const std::string> subjects,
                                      std::uint32_t k_anchors, TextBackend& backend, std::uint64_t seed);

// Anchors visible at `zoom`, by rank.
std::vector<LabelAnchor> labels_at(std::span<const LabelAnchor> anchors, double zoom);

// Nearest-anchor distance summary. A record is an orphan when its nearest
// anchor is more than kOrphanFactor times the 95th-percentile distance away.
inline constexpr double kOrphanFactor = 2.0;
struct LabelCoverage {
  double p95 = 0;
  double max = 0;
  std::size_t orphans = 0;
};
LabelCoverage label_coverage(std::span<const Point2> positions, std::span<const LabelAnchor> anchors);

// JSONL, one anchor per line: position [x,y], text, rank, min_zoom, population.
void save_anchors(std::span<const LabelAnchor> anchors, const std::filesystem::path& path);
std::vector<LabelAnchor> load_anchors(const std::filesystem::path& path);

}  // namespace atlas
