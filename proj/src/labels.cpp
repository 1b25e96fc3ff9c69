#include "atlas/labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "atlas/error.hpp"
#include "atlas/kmeans.hpp"

namespace atlas {

double label_min_zoom(std::uint32_t rank, std::uint32_t count) {
  if (rank < 1 || rank > count) throw ValidationError("label rank out of range");
  if (count == 1) return 0;
  return kLabelZoomSpan * (std::log2(rank + 1.0) - 1.0) / (std::log2(count + 1.0) - 1.0);
}

std::vector<LabelAnchor> place_labels(std::span<const Point2> positions, std::span<const std::string> subjects,
                                      std::uint32_t k_anchors, TextBackend& backend, std::uint64_t seed) {
  if (positions.size() != subjects.size()) throw ValidationError("one subject per position is required");
  if (k_anchors == 0) return {};
  std::set<std::pair<double, double>> distinct;
  for (const auto& p : positions) distinct.emplace(p.x, p.y);
  if (k_anchors > distinct.size())
    throw ValidationError("k_anchors (" + std::to_string(k_anchors) + ") exceeds the " +
                          std::to_string(distinct.size()) + " distinct positions");

  std::vector<float> pts(positions.size() * 2);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    pts[2 * i] = static_cast<float>(positions[i].x);
    pts[2 * i + 1] = static_cast<float>(positions[i].y);
  }
  const auto km = kmeans(pts, 2, {k_anchors, 50, seed});

  std::vector<std::size_t> population(k_anchors, 0);
  for (auto a : km.assignment) ++population[a];

  std::vector<LabelAnchor> anchors(k_anchors);
  std::vector<std::pair<double, std::size_t>> dist(positions.size());
  for (std::uint32_t c = 0; c < k_anchors; ++c) {
    const Point2 centre{km.centroids[2 * c], km.centroids[2 * c + 1]};
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const double dx = positions[i].x - centre.x, dy = positions[i].y - centre.y;
      dist[i] = {dx * dx + dy * dy, i};
    }
    const std::size_t take = std::min(kLabelNeighbors, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
    std::vector<std::string> near;
    for (std::size_t t = 0; t < take; ++t) near.push_back(subjects[dist[t].second]);
    anchors[c].position = centre;
    anchors[c].text = backend.label(near);
    anchors[c].population = population[c];
  }

  std::vector<std::uint32_t> order(k_anchors);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return population[a] > population[b]; });
  std::vector<LabelAnchor> ranked;
  ranked.reserve(k_anchors);
  for (std::uint32_t r = 0; r < k_anchors; ++r) {
    auto a = std::move(anchors[order[r]]);
    a.rank = r + 1;
    a.min_zoom = label_min_zoom(a.rank, k_anchors);
    ranked.push_back(std::move(a));
  }
  return ranked;
}

std::vector<LabelAnchor> labels_at(std::span<const LabelAnchor> anchors, double zoom) {
  std::vector<LabelAnchor> out;
  for (const auto& a : anchors)
    if (a.min_zoom <= zoom) out.push_back(a);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.rank < b.rank; });
  return out;
}

LabelCoverage label_coverage(std::span<const Point2> positions, std::span<const LabelAnchor> anchors) {
  LabelCoverage cov;
  if (positions.empty() || anchors.empty()) return cov;
  std::vector<double> nearest(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& a : anchors) best = std::min(best, std::hypot(positions[i].x - a.position.x, positions[i].y - a.position.y));
    nearest[i] = best;
  }
  auto sorted = nearest;
  std::sort(sorted.begin(), sorted.end());
  const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
  cov.p95 = sorted[idx];
  cov.max = sorted.back();
  for (double d : nearest)
    if (d > kOrphanFactor * cov.p95) ++cov.orphans;
  return cov;
}

void save_anchors(std::span<const LabelAnchor> anchors, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& a : anchors) {
      nlohmann::json j = {{"position", {a.position.x, a.position.y}},
                          {"text", a.text},
                          {"rank", a.rank},
                          {"min_zoom", a.min_zoom},
                          {"population", a.population}};
      out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<LabelAnchor> load_anchors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<LabelAnchor> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      LabelAnchor a;
      a.position = {j.at("position").at(0).get<double>(), j.at("position").at(1).get<double>()};
      a.text = j.at("text").get<std::string>();
      a.rank = j.at("rank").get<std::uint32_t>();
      a.min_zoom = j.at("min_zoom").get<double>();
      a.population = j.value("population", std::size_t{0});
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace atlas
