#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atlas/corpus.hpp"
#include "atlas/remote.hpp"

namespace atlas {

enum class EmbedderBackend { FeatureHash, Remote };

struct EmbedderSpec {
  EmbedderBackend backend = EmbedderBackend::FeatureHash;
  std::uint32_t dim = 128;
  std::uint64_t seed = 0x5eed;
  RemoteEndpoint remote;       // Remote only
  std::size_t batch_size = 256;
  std::size_t max_in_flight = 4;

  static constexpr std::uint32_t kMinDim = 8;
  static constexpr std::uint32_t kDefaultOfflineDim = 128;
  static constexpr std::uint32_t kDefaultRemoteDim = 768;

  // Throws ValidationError when dim < 8 or a remote spec lacks an endpoint.
  void validate() const;
};

// Lowercased ASCII, split on anything that is not alphanumeric. Bytes >= 0x80
// are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

// One unit row per text, in input order. Empty texts are rejected by index.
// Remote failures surface as BackendError; a reply with the wrong row count
// or dimension fails the whole batch.
EmbeddingMatrix embed_batch(const EmbedderSpec& spec, std::span<const std::string> texts);

// Single text convenience wrapper.
std::vector<float> embed_one(const EmbedderSpec& spec, const std::string& text);

}  // namespace atlas
