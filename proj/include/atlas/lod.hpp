#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace atlas {

// Zoom model shared by the service and the client.
inline constexpr double kZoomMin = 0.0;
inline constexpr double kZoomMax = 8.0;
inline constexpr double kDensityFadeStart = 5.0;
inline constexpr double kDensityFadeEnd = 6.5;

// 1 up to kDensityFadeStart, linear to 0 at kDensityFadeEnd.
double density_opacity(double zoom);

struct LodParams {
  double preview_fraction = 1.0 / 500;
  // No individual points below this zoom.
  double point_floor = 4.0;
  std::uint64_t seed = 0x10d;

  void validate() const;
};

// Per record: the zoom from which its point is drawn, and whether it shows a
// preview icon. min_zoom = clamp(kZoomMax + log4(u), point_floor, kZoomMax)
// with u a seeded hash of the id in (0, 1], so the visible share quadruples
// per zoom step while the screen area shrinks by four.
struct LodAssignment {
  std::vector<float> min_zoom;
  std::vector<std::uint8_t> preview;

  std::size_t size() const noexcept { return min_zoom.size(); }
  bool visible(std::size_t i, double zoom) const { return min_zoom[i] <= zoom; }
  bool operator==(const LodAssignment&) const = default;
};

// has_image[i] != 0 when record i has a preview image.
LodAssignment assign_lod(std::span<const std::uint64_t> ids, std::span<const std::uint8_t> has_image,
                         const LodParams& params);

// "PLOD", version, count, f32 min_zoom[count], u8 preview[count].
void save_lod(const LodAssignment& lod, const std::filesystem::path& path);
LodAssignment load_lod(const std::filesystem::path& path);

}  // namespace atlas
