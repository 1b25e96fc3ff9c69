#include "atlas/image_backend.hpp"

#include <array>

#include "atlas/error.hpp"
#include "atlas/hash.hpp"
#include "atlas/png.hpp"
#include "atlas/rng.hpp"

namespace atlas {

GeneratedImage ProceduralImageBackend::generate(const std::string& prompt, std::uint64_t seed) {
  if (prompt.empty()) throw ValidationError("image prompt must be non-empty");
  Rng rng(hash64(prompt, seed));
  std::array<int, 3> top{}, bottom{};
  for (int c = 0; c < 3; ++c) {
    top[c] = static_cast<int>(rng.below(256));
    bottom[c] = static_cast<int>(rng.below(256));
  }
  struct Disc {
    int cx, cy, r2;
    std::array<int, 3> color;
  };
  std::vector<Disc> discs(2 + rng.below(4));
  for (auto& d : discs) {
    d.cx = static_cast<int>(rng.below(kSize));
    d.cy = static_cast<int>(rng.below(kSize));
    const int r = 4 + static_cast<int>(rng.below(kSize / 4));
    d.r2 = r * r;
    for (auto& c : d.color) c = static_cast<int>(rng.below(256));
  }
  std::vector<std::uint8_t> px(static_cast<std::size_t>(kSize) * kSize * 3);
  for (std::uint32_t y = 0; y < kSize; ++y)
    for (std::uint32_t x = 0; x < kSize; ++x) {
      std::array<int, 3> rgb{};
      for (int c = 0; c < 3; ++c)
        rgb[c] = (top[c] * static_cast<int>(kSize - 1 - y) + bottom[c] * static_cast<int>(y)) / static_cast<int>(kSize - 1);
      for (const auto& d : discs) {
        const int dx = static_cast<int>(x) - d.cx, dy = static_cast<int>(y) - d.cy;
        if (dx * dx + dy * dy <= d.r2) rgb = d.color;
      }
      for (int c = 0; c < 3; ++c) px[(static_cast<std::size_t>(y) * kSize + x) * 3 + c] = static_cast<std::uint8_t>(rgb[c]);
    }
  return {encode_png(kSize, kSize, 3, px), "image/png"};
}

RemoteImageBackend::RemoteImageBackend(RemoteEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.url.empty()) throw ValidationError("remote image backend needs an endpoint");
}

GeneratedImage RemoteImageBackend::generate(const std::string& prompt, std::uint64_t seed) {
  if (prompt.empty()) throw ValidationError("image prompt must be non-empty");
  auto raw = post_json_raw(endpoint_, {{"prompt", prompt}, {"seed", seed}});
  if (raw.body.empty()) throw BackendError("image service returned an empty body", raw.status, false);
  return {std::vector<std::uint8_t>(raw.body.begin(), raw.body.end()),
          raw.content_type.empty() ? "application/octet-stream" : raw.content_type};
}

std::string image_key(const ImageBackend& backend, const std::string& prompt, std::uint64_t seed) {
  return content_key({prompt, backend.id(), std::to_string(seed)});
}

std::string generate_and_store(ImageBackend& backend, KvStore& store, const std::string& prompt,
                               std::uint64_t seed) {
  auto key = image_key(backend, prompt, seed);
  if (!store.contains(key)) {
    auto image = backend.generate(prompt, seed);
    store.put(key, image.bytes, image.mime);
  }
  return key;
}

}  // namespace atlas
