#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "atlas/artifacts.hpp"
#include "atlas/image_backend.hpp"
#include "atlas/kv_store.hpp"

namespace atlas {

struct FieldData {
  EmbeddingMatrix matrix;             // by embedding row
  std::optional<IvfPqIndex> index;    // absent for corpora too small to train
};

// Immutable view of one artifact directory. Records are the served ones,
// ordered by embedding row.
class Snapshot {
 public:
  static std::shared_ptr<Snapshot> load(const std::filesystem::path& dir);

  std::uint64_t version() const noexcept { return version_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }
  const std::vector<PromptRecord>& records() const noexcept { return records_; }
  // Row of a served record, or nullopt for unknown and NSFW-flagged ids.
  std::optional<std::size_t> row_of(std::uint64_t id) const;
  const MapLayout& map() const noexcept { return map_; }
  const TilePyramid& tiles() const noexcept { return *tiles_; }
  const EmbedderSpec& embedder() const noexcept { return embedder_; }
  // nullptr when the field was not embedded.
  const FieldData* field(std::string_view name) const;
  KvStore* images() const noexcept { return images_.get(); }
  // Rows ordered by (LOD min_zoom, id hash): the points visible at any zoom
  // form a prefix of this order.
  const std::vector<std::uint32_t>& zoom_order() const noexcept { return zoom_order_; }

 private:
  friend class MapService;
  std::uint64_t version_ = 0;
  std::filesystem::path dir_;
  std::vector<PromptRecord> records_;
  std::unordered_map<std::uint64_t, std::size_t> rows_;
  MapLayout map_;
  std::unique_ptr<TilePyramid> tiles_;
  EmbedderSpec embedder_;
  std::map<std::string, FieldData, std::less<>> fields_;
  std::unique_ptr<KvStore> images_;
  std::vector<std::uint32_t> zoom_order_;
};

struct ServiceConfig {
  std::size_t viewport_cap = 5000;
  std::size_t history_cap = 100;
  std::size_t max_search_k = 1000;
  std::size_t default_search_k = kDefaultSearchK;
  // Shortlist multiplier for approximate search with exact re-rank.
  std::size_t rerank_factor = 4;
  std::uint64_t default_image_seed = 0;
  std::size_t generate_in_flight = 4;
};

struct BBox {
  double minx = 0, miny = 0, maxx = 0, maxy = 0;
};

// Request handlers over the current snapshot. Every handler takes the
// snapshot explicitly so one response never mixes two versions.
class MapService {
 public:
  MapService(std::shared_ptr<Snapshot> initial, ServiceConfig config, std::unique_ptr<ImageBackend> images,
             std::shared_ptr<KvStore> generated);

  std::shared_ptr<const Snapshot> snapshot() const;
  // Installs `next` under a new, strictly larger version and returns it.
  // Requests already holding the old snapshot finish on it.
  std::uint64_t swap_snapshot(std::shared_ptr<Snapshot> next);

  const ServiceConfig& config() const noexcept { return config_; }

  nlohmann::json viewport(const Snapshot& snap, const BBox& box, double zoom) const;
  nlohmann::json search(const Snapshot& snap, const nlohmann::json& request) const;
  nlohmann::json point(const Snapshot& snap, std::uint64_t id) const;
  nlohmann::json labels(const Snapshot& snap, double zoom) const;
  // Image bytes by content key from the snapshot store or generated images.
  std::optional<KvValue> image(const Snapshot& snap, const std::string& key) const;

  nlohmann::json generate(const std::string& session, const nlohmann::json& request);
  nlohmann::json history(const std::string& session) const;
  // false when the session has no entry with that id.
  bool delete_history(const std::string& session, std::uint64_t id);

 private:
  struct HistoryEntry {
    std::uint64_t id;
    std::string prompt;
    std::uint64_t seed;
    std::string key;
  };
  struct Session {
    std::uint64_t next_id = 1;
    std::vector<HistoryEntry> entries;
  };

  ServiceConfig config_;
  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<Snapshot> snapshot_;
  std::uint64_t last_version_ = 0;

  std::unique_ptr<ImageBackend> image_backend_;
  std::shared_ptr<KvStore> generated_;
  std::counting_semaphore<64> generate_slots_;
  mutable std::mutex history_mutex_;
  std::unordered_map<std::string, Session> sessions_;
};

// Zoom validation shared by the HTTP layer: finite and within the zoom range.
double check_zoom(double zoom);

}  // namespace atlas
