#include "atlas/lod.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "atlas/binio.hpp"
#include "atlas/error.hpp"
#include "atlas/hash.hpp"

namespace atlas {

namespace {
constexpr std::uint32_t kLodVersion = 1;
constexpr std::uint64_t kZoomSalt = 0x7a6f6f6d;
constexpr std::uint64_t kPreviewSalt = 0x70726576;
}  // namespace

double density_opacity(double zoom) {
  if (zoom <= kDensityFadeStart) return 1.0;
  if (zoom >= kDensityFadeEnd) return 0.0;
  return (kDensityFadeEnd - zoom) / (kDensityFadeEnd - kDensityFadeStart);
}

void LodParams::validate() const {
  if (!(preview_fraction >= 0 && preview_fraction <= 1)) throw ValidationError("preview_fraction must be in [0, 1]");
  if (!(point_floor >= kZoomMin && point_floor <= kZoomMax))
    throw ValidationError("point_floor must lie in the zoom range");
}

LodAssignment assign_lod(std::span<const std::uint64_t> ids, std::span<const std::uint8_t> has_image,
                         const LodParams& params) {
  params.validate();
  if (ids.size() != has_image.size()) throw ValidationError("one image flag per id is required");
  LodAssignment lod;
  lod.min_zoom.resize(ids.size());
  lod.preview.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double u = hash_to_unit(hash_combine({params.seed, kZoomSalt, ids[i]}));
    const double z = kZoomMax + std::log2(u) / 2.0;
    lod.min_zoom[i] = static_cast<float>(std::clamp(z, params.point_floor, kZoomMax));
    const double v = hash_to_unit(hash_combine({params.seed, kPreviewSalt, ids[i]}));
    // hash_to_unit is in (0, 1], so a fraction of 1 flags everything.
    lod.preview[i] = has_image[i] && v <= params.preview_fraction ? 1 : 0;
  }
  return lod;
}

void save_lod(const LodAssignment& lod, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    binio::put_magic(out, "PLOD");
    binio::put<std::uint32_t>(out, kLodVersion);
    binio::put<std::uint64_t>(out, lod.size());
    binio::put_span<float>(out, std::span<const float>(lod.min_zoom));
    binio::put_span<std::uint8_t>(out, std::span<const std::uint8_t>(lod.preview));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LodAssignment load_lod(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    binio::expect_magic(in, "PLOD");
    if (const auto v = binio::get<std::uint32_t>(in, "lod header"); v != kLodVersion)
      throw FormatError("unsupported lod version " + std::to_string(v));
    const auto n = binio::get<std::uint64_t>(in, "lod header");
    const auto size = std::filesystem::file_size(path);
    if (n > size) throw FormatError("truncated lod payload");
    LodAssignment lod;
    lod.min_zoom.resize(n);
    lod.preview.resize(n);
    binio::get_span<float>(in, std::span<float>(lod.min_zoom), "lod zooms");
    binio::get_span<std::uint8_t>(in, std::span<std::uint8_t>(lod.preview), "lod previews");
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes");
    return lod;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace atlas
