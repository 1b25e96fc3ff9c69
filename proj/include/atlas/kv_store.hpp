#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

struct sqlite3;

namespace atlas {

struct KvValue {
  std::vector<std::uint8_t> bytes;
  std::string mime;
};

// File-backed key/value store for preview images. Many concurrent readers,
// one writer at a time; last writer wins per key.
class KvStore {
 public:
  // Opens (creating if needed) the store at `path`.
  explicit KvStore(const std::filesystem::path& path);
  ~KvStore();
  KvStore(const KvStore&) = delete;
  KvStore& operator=(const KvStore&) = delete;

  void put(std::string_view key, std::span<const std::uint8_t> value,
           std::string_view mime = "application/octet-stream");

  // std::nullopt when the key is absent; an empty vector is a present, empty value.
  std::optional<KvValue> get(std::string_view key) const;

  // Like get() but throws NotFound.
  KvValue at(std::string_view key) const;

  bool contains(std::string_view key) const;
  std::size_t size() const;

 private:
  sqlite3* db_ = nullptr;
  mutable std::shared_mutex mutex_;
};

// Hex SHA-256 of the concatenated, length-prefixed parts.
std::string content_key(std::initializer_list<std::string_view> parts);

}  // namespace atlas
