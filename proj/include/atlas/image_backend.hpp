#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "atlas/kv_store.hpp"
#include "atlas/remote.hpp"

namespace atlas {

struct GeneratedImage {
  std::vector<std::uint8_t> bytes;
  std::string mime;
};

class ImageBackend {
 public:
  virtual ~ImageBackend() = default;
  virtual std::string id() const = 0;
  virtual GeneratedImage generate(const std::string& prompt, std::uint64_t seed) = 0;
};

// Deterministic 64x64 RGB PNG derived from hash(prompt, seed).
class ProceduralImageBackend final : public ImageBackend {
 public:
  static constexpr std::uint32_t kSize = 64;
  std::string id() const override { return "procedural"; }
  GeneratedImage generate(const std::string& prompt, std::uint64_t seed) override;
};

// POST {"prompt", "seed"} -> image bytes.
class RemoteImageBackend final : public ImageBackend {
 public:
  explicit RemoteImageBackend(RemoteEndpoint endpoint);
  std::string id() const override { return "remote:" + endpoint_.url; }
  GeneratedImage generate(const std::string& prompt, std::uint64_t seed) override;

 private:
  RemoteEndpoint endpoint_;
};

// Content key of (prompt, backend id, seed).
std::string image_key(const ImageBackend& backend, const std::string& prompt, std::uint64_t seed);

// Generates unless the key is already stored; returns the key.
std::string generate_and_store(ImageBackend& backend, KvStore& store, const std::string& prompt,
                               std::uint64_t seed);

}  // namespace atlas
