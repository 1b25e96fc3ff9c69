#include "atlas/embedder.hpp"

#include <cmath>
#include <future>
#include <semaphore>

#include "atlas/error.hpp"
#include "atlas/hash.hpp"
#include "atlas/parallel.hpp"

namespace atlas {

namespace {

bool is_token_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

// Signed feature hashing. The sign comes from the low bit and the bucket from
// the remaining bits, so the two are independent.
void hash_into(std::span<float> row, const std::vector<std::string>& tokens, std::uint64_t seed) {
  const std::uint64_t dim = row.size();
  for (const auto& tok : tokens) {
    const std::uint64_t h = hash64(tok, seed);
    row[(h >> 1) % dim] += (h & 1) ? -1.0f : 1.0f;
  }
}

void feature_hash_row(std::span<float> row, const std::string& text, std::uint64_t seed) {
  std::fill(row.begin(), row.end(), 0.0f);
  hash_into(row, tokenize(text), seed);
  double norm = 0;
  for (float v : row) norm += static_cast<double>(v) * v;
  if (norm == 0) {
    // No tokens survived, or they cancelled: fall back to the raw text.
    hash_into(row, {text}, seed ^ 0x9e3779b97f4a7c15ULL);
    norm = 1;
  }
  const float inv = static_cast<float>(1.0 / std::sqrt(norm));
  for (float& v : row) v *= inv;
}

std::vector<float> remote_batch(const EmbedderSpec& spec, std::span<const std::string> texts) {
  nlohmann::json body;
  body["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  const auto reply = post_json(spec.remote, body);
  auto it = reply.find("vectors");
  if (it == reply.end() || !it->is_array())
    throw BackendError("embedding reply lacks a 'vectors' array", 200, false);
  if (it->size() != texts.size())
    throw BackendError("embedding reply has " + std::to_string(it->size()) + " rows for " +
                           std::to_string(texts.size()) + " texts",
                       200, false);
  std::vector<float> out;
  out.reserve(texts.size() * spec.dim);
  for (const auto& vec : *it) {
    if (!vec.is_array() || vec.size() != spec.dim)
      throw BackendError("embedding reply row has dimension " + std::to_string(vec.size()) + ", expected " +
                             std::to_string(spec.dim),
                         200, false);
    for (const auto& v : vec) out.push_back(v.get<float>());
  }
  return out;
}

}  // namespace

void EmbedderSpec::validate() const {
  if (dim < kMinDim) throw ValidationError("embedder dim must be >= 8, got " + std::to_string(dim));
  if (backend == EmbedderBackend::Remote && remote.url.empty())
    throw ValidationError("remote embedder needs an endpoint");
  if (batch_size == 0 || max_in_flight == 0) throw ValidationError("batch size and in-flight limit must be >= 1");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (is_token_byte(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

EmbeddingMatrix embed_batch(const EmbedderSpec& spec, std::span<const std::string> texts) {
  spec.validate();
  for (std::size_t i = 0; i < texts.size(); ++i)
    if (texts[i].empty()) throw ValidationError("text " + std::to_string(i) + " is empty");

  std::vector<float> data(texts.size() * spec.dim);
  if (spec.backend == EmbedderBackend::FeatureHash) {
    parallel_for(0, texts.size(), [&](std::size_t i) {
      feature_hash_row(std::span<float>(data).subspan(i * spec.dim, spec.dim), texts[i], spec.seed);
    });
    return EmbeddingMatrix(spec.dim, std::move(data));
  }

  // Remote: batches in flight bounded by a semaphore, results placed by offset.
  std::counting_semaphore<> slots(static_cast<std::ptrdiff_t>(spec.max_in_flight));
  std::vector<std::future<void>> pending;
  for (std::size_t start = 0; start < texts.size(); start += spec.batch_size) {
    const std::size_t len = std::min(spec.batch_size, texts.size() - start);
    slots.acquire();
    pending.push_back(std::async(std::launch::async, [&, start, len] {
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{slots};
      auto rows = remote_batch(spec, texts.subspan(start, len));
      std::copy(rows.begin(), rows.end(), data.begin() + static_cast<std::ptrdiff_t>(start * spec.dim));
    }));
  }
  for (auto& f : pending) f.get();
  return EmbeddingMatrix::from_unnormalized(spec.dim, std::move(data));
}

std::vector<float> embed_one(const EmbedderSpec& spec, const std::string& text) {
  auto m = embed_batch(spec, std::span<const std::string>(&text, 1));
  auto row = m.row(0);
  return {row.begin(), row.end()};
}

}  // namespace atlas
