#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atlas/corpus.hpp"

namespace atlas {

inline constexpr std::uint32_t kGridResolution = 2000;

struct Bounds {
  double minx = 0, miny = 0, maxx = 1, maxy = 1;
  bool operator==(const Bounds&) const = default;
};

// Min/max of the positions; unit square when empty.
Bounds bounds_of(std::span<const Point2> positions);

struct DensityGrid {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Bounds bounds;
  std::vector<std::uint32_t> counts;  // row-major, row 0 at miny

  std::uint32_t at(std::uint32_t col, std::uint32_t row) const { return counts[std::size_t(row) * width + col]; }
  std::uint64_t total() const;
  bool operator==(const DensityGrid&) const = default;
};

// Bin index of v along one axis: floor((v - lo) / (hi - lo) * bins), clamped
// to [0, bins - 1]. A zero extent puts everything in bin 0.
std::uint32_t bin_of(double v, double lo, double hi, std::uint32_t bins);

DensityGrid density_grid(std::span<const Point2> positions, std::uint32_t resolution = kGridResolution);

// "PGRD", version, width, height, bounds as f64, then u32 counts.
void save_grid(const DensityGrid& grid, const std::filesystem::path& path);
DensityGrid load_grid(const std::filesystem::path& path);

inline constexpr std::uint32_t kTileSize = 256;
inline constexpr std::uint32_t kMaxTileLevel = 3;

// Grayscale z/x/y tile pyramid cut from a grid. Level z is 2^z tiles a side;
// tile (0,0) is the top-left (minx, maxy). Intensity is
// log1p(count) / log1p(max count of the level); darker means denser.
class TilePyramid {
 public:
  explicit TilePyramid(const DensityGrid& grid);

  // PNG bytes, or nullptr when (z, x, y) is outside the pyramid.
  const std::vector<std::uint8_t>* tile(std::uint32_t z, std::uint32_t x, std::uint32_t y) const;
  // Raw 8-bit pixels of a tile, row-major, kTileSize^2.
  std::vector<std::uint8_t> pixels(std::uint32_t z, std::uint32_t x, std::uint32_t y) const;

 private:
  struct Level {
    std::uint32_t side = 0;               // pixels per axis
    std::vector<std::uint32_t> counts;    // side x side, row 0 at the top
    std::uint32_t max = 0;
    std::vector<std::vector<std::uint8_t>> png;  // per tile, row-major over tiles
  };
  std::vector<Level> levels_;
};

}  // namespace atlas
