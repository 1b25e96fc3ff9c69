#include "atlas/density.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "atlas/binio.hpp"
#include "atlas/error.hpp"
#include "atlas/png.hpp"

namespace atlas {

using namespace binio;

namespace {
constexpr std::uint32_t kGridVersion = 1;
}

Bounds bounds_of(std::span<const Point2> positions) {
  if (positions.empty()) return {};
  Bounds b{positions[0].x, positions[0].y, positions[0].x, positions[0].y};
  for (const auto& p : positions) {
    b.minx = std::min(b.minx, p.x);
    b.miny = std::min(b.miny, p.y);
    b.maxx = std::max(b.maxx, p.x);
    b.maxy = std::max(b.maxy, p.y);
  }
  return b;
}

std::uint64_t DensityGrid::total() const {
  std::uint64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

std::uint32_t bin_of(double v, double lo, double hi, std::uint32_t bins) {
  const double extent = hi - lo;
  if (!(extent > 0)) return 0;
  const double f = std::floor((v - lo) / extent * bins);
  if (!(f > 0)) return 0;
  if (f >= bins) return bins - 1;
  return static_cast<std::uint32_t>(f);
}

DensityGrid density_grid(std::span<const Point2> positions, std::uint32_t resolution) {
  if (resolution == 0) throw ValidationError("grid resolution must be positive");
  DensityGrid g;
  g.width = g.height = resolution;
  g.bounds = bounds_of(positions);
  g.counts.assign(std::size_t(resolution) * resolution, 0);
  for (const auto& p : positions) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw ValidationError("non-finite position in density input");
    const auto c = bin_of(p.x, g.bounds.minx, g.bounds.maxx, resolution);
    const auto r = bin_of(p.y, g.bounds.miny, g.bounds.maxy, resolution);
    ++g.counts[std::size_t(r) * resolution + c];
  }
  return g;
}

void save_grid(const DensityGrid& grid, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    put_magic(out, "PGRD");
    put<std::uint32_t>(out, kGridVersion);
    put<std::uint32_t>(out, grid.width);
    put<std::uint32_t>(out, grid.height);
    put<double>(out, grid.bounds.minx);
    put<double>(out, grid.bounds.miny);
    put<double>(out, grid.bounds.maxx);
    put<double>(out, grid.bounds.maxy);
    put_span<std::uint32_t>(out, std::span<const std::uint32_t>(grid.counts));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

static DensityGrid read_grid(std::istream& in) {
  expect_magic(in, "PGRD");
  if (const auto v = get<std::uint32_t>(in, "grid header"); v != kGridVersion)
    throw FormatError("unsupported grid version " + std::to_string(v));
  DensityGrid g;
  g.width = get<std::uint32_t>(in, "grid header");
  g.height = get<std::uint32_t>(in, "grid header");
  g.bounds.minx = get<double>(in, "grid bounds");
  g.bounds.miny = get<double>(in, "grid bounds");
  g.bounds.maxx = get<double>(in, "grid bounds");
  g.bounds.maxy = get<double>(in, "grid bounds");
  if (g.width > 1u << 15 || g.height > 1u << 15) throw FormatError("implausible grid size");
  g.counts.resize(std::size_t(g.width) * g.height);
  get_span<std::uint32_t>(in, std::span<std::uint32_t>(g.counts), "grid counts");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes");
  return g;
}

DensityGrid load_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_grid(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

TilePyramid::TilePyramid(const DensityGrid& grid) {
  for (std::uint32_t z = 0; z <= kMaxTileLevel; ++z) {
    Level lv;
    lv.side = kTileSize << z;
    lv.counts.assign(std::size_t(lv.side) * lv.side, 0);
    if (lv.side <= grid.width && lv.side <= grid.height) {
      // Sum-pool: every bin lands in exactly one pixel.
      for (std::uint32_t r = 0; r < grid.height; ++r) {
        const std::uint32_t py = lv.side - 1 - static_cast<std::uint32_t>(std::uint64_t(r) * lv.side / grid.height);
        for (std::uint32_t c = 0; c < grid.width; ++c) {
          const std::uint32_t px = static_cast<std::uint32_t>(std::uint64_t(c) * lv.side / grid.width);
          lv.counts[std::size_t(py) * lv.side + px] += grid.at(c, r);
        }
      }
    } else if (grid.width && grid.height) {
      // Finer than the grid: nearest bin.
      for (std::uint32_t py = 0; py < lv.side; ++py) {
        const auto r = static_cast<std::uint32_t>(std::uint64_t(lv.side - 1 - py) * grid.height / lv.side);
        for (std::uint32_t px = 0; px < lv.side; ++px) {
          const auto c = static_cast<std::uint32_t>(std::uint64_t(px) * grid.width / lv.side);
          lv.counts[std::size_t(py) * lv.side + px] = grid.at(c, r);
        }
      }
    }
    lv.max = lv.counts.empty() ? 0 : *std::max_element(lv.counts.begin(), lv.counts.end());
    levels_.push_back(std::move(lv));
  }
  for (std::uint32_t z = 0; z < levels_.size(); ++z) {
    const std::uint32_t tiles = 1u << z;
    levels_[z].png.resize(std::size_t(tiles) * tiles);
    for (std::uint32_t y = 0; y < tiles; ++y)
      for (std::uint32_t x = 0; x < tiles; ++x)
        levels_[z].png[std::size_t(y) * tiles + x] = encode_png(kTileSize, kTileSize, 1, pixels(z, x, y));
  }
}

std::vector<std::uint8_t> TilePyramid::pixels(std::uint32_t z, std::uint32_t x, std::uint32_t y) const {
  if (z >= levels_.size() || x >= (1u << z) || y >= (1u << z)) throw NotFound("no tile " + std::to_string(z) + "/" +
                                                                              std::to_string(x) + "/" + std::to_string(y));
  const auto& lv = levels_[z];
  const double denom = std::log1p(static_cast<double>(lv.max));
  std::vector<std::uint8_t> px(std::size_t(kTileSize) * kTileSize, 255);
  if (lv.max == 0) return px;
  for (std::uint32_t r = 0; r < kTileSize; ++r) {
    const std::size_t row = std::size_t(y) * kTileSize + r;
    for (std::uint32_t c = 0; c < kTileSize; ++c) {
      const std::uint32_t count = lv.counts[row * lv.side + std::size_t(x) * kTileSize + c];
      const double intensity = std::log1p(static_cast<double>(count)) / denom;
      px[std::size_t(r) * kTileSize + c] = static_cast<std::uint8_t>(std::lround(255.0 - 255.0 * intensity));
    }
  }
  return px;
}

const std::vector<std::uint8_t>* TilePyramid::tile(std::uint32_t z, std::uint32_t x, std::uint32_t y) const {
  if (z >= levels_.size()) return nullptr;
  const std::uint32_t tiles = 1u << z;
  if (x >= tiles || y >= tiles) return nullptr;
  return &levels_[z].png[std::size_t(y) * tiles + x];
}

}  // namespace atlas
