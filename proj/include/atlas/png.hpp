#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace atlas {

// 8-bit PNG of `channels` (1 = gray, 3 = RGB) interleaved samples.
std::vector<std::uint8_t> encode_png(std::uint32_t width, std::uint32_t height, std::uint32_t channels,
                                     std::span<const std::uint8_t> pixels);

struct DecodedPng {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Used by tests and the tile checks; accepts only what encode_png produces.
DecodedPng decode_png(std::span<const std::uint8_t> bytes);

}  // namespace atlas
