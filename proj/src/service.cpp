#include "atlas/service.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "atlas/error.hpp"
#include "atlas/hash.hpp"
#include "atlas/vecmath.hpp"

namespace atlas {

using nlohmann::json;

namespace {

constexpr std::uint64_t kOrderSalt = 0x6f72646572;

std::string image_url(const std::string& key) { return "/api/image/" + key; }

std::uint32_t tile_level(double zoom) {
  return static_cast<std::uint32_t>(std::min<double>(kMaxTileLevel, std::floor(zoom)));
}

std::uint32_t tile_index(double v, double lo, double hi, std::uint32_t tiles) { return bin_of(v, lo, hi, tiles); }

}  // namespace

double check_zoom(double zoom) {
  if (!std::isfinite(zoom) || zoom < kZoomMin || zoom > kZoomMax)
    throw ValidationError("zoom must be a number in [" + std::to_string(kZoomMin) + ", " + std::to_string(kZoomMax) +
                          "]");
  return zoom;
}

// ---- Snapshot ----

std::shared_ptr<Snapshot> Snapshot::load(const std::filesystem::path& dir) {
  auto snap = std::make_shared<Snapshot>();
  snap->dir_ = dir;
  auto all = read_corpus(dir / kCorpusFile);
  snap->map_ = load_map(dir);
  const std::size_t n = snap->map_.positions.size();
  snap->records_.resize(n);
  std::vector<char> seen(n, 0);
  for (auto& r : all) {
    if (r.nsfw_flagged || !r.embedding_row) continue;
    const auto row = *r.embedding_row;
    if (row >= n || seen[row])
      throw FormatError("corpus embedding_row " + std::to_string(row) + " does not match the map artifacts");
    seen[row] = 1;
    r.position = snap->map_.positions[row];
    snap->rows_.emplace(r.id, row);
    snap->records_[row] = std::move(r);
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw FormatError("map artifacts cover rows that no served record references; rerun embed and layout");

  {
    std::ifstream in(dir / kEmbedderFile);
    if (!in) throw IoError("missing " + (dir / kEmbedderFile).string() + "; run embed first");
    snap->embedder_ = embedder_from_json(json::parse(in));
  }
  for (auto f : kSearchFields) {
    const auto emb = embeddings_path(dir, f);
    if (!std::filesystem::exists(emb)) continue;
    FieldData fd;
    fd.matrix = read_embeddings(emb);
    if (fd.matrix.count() != n)
      throw FormatError(emb.string() + " has " + std::to_string(fd.matrix.count()) + " rows, expected " +
                        std::to_string(n));
    if (const auto idx = index_path(dir, f); std::filesystem::exists(idx)) fd.index = IvfPqIndex::load(idx);
    snap->fields_.emplace(std::string(f), std::move(fd));
  }
  snap->tiles_ = std::make_unique<TilePyramid>(snap->map_.grid);
  if (std::filesystem::exists(dir / kImagesFile)) snap->images_ = std::make_unique<KvStore>(dir / kImagesFile);

  snap->zoom_order_.resize(n);
  std::iota(snap->zoom_order_.begin(), snap->zoom_order_.end(), 0);
  std::vector<std::uint64_t> tie(n);
  for (std::size_t i = 0; i < n; ++i) tie[i] = hash_combine({kOrderSalt, snap->records_[i].id});
  std::sort(snap->zoom_order_.begin(), snap->zoom_order_.end(), [&](std::uint32_t a, std::uint32_t b) {
    const float za = snap->map_.lod.min_zoom[a], zb = snap->map_.lod.min_zoom[b];
    if (za != zb) return za < zb;
    if (tie[a] != tie[b]) return tie[a] < tie[b];
    return a < b;
  });
  return snap;
}

std::optional<std::size_t> Snapshot::row_of(std::uint64_t id) const {
  const auto it = rows_.find(id);
  if (it == rows_.end()) return std::nullopt;
  return it->second;
}

const FieldData* Snapshot::field(std::string_view name) const {
  const auto it = fields_.find(name);
  return it == fields_.end() ? nullptr : &it->second;
}

// ---- MapService ----

MapService::MapService(std::shared_ptr<Snapshot> initial, ServiceConfig config, std::unique_ptr<ImageBackend> images,
                       std::shared_ptr<KvStore> generated)
    : config_(config),
      image_backend_(std::move(images)),
      generated_(std::move(generated)),
      generate_slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(config.generate_in_flight, 1, 64))) {
  if (!initial) throw ValidationError("service needs an initial snapshot");
  swap_snapshot(std::move(initial));
}

std::shared_ptr<const Snapshot> MapService::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::uint64_t MapService::swap_snapshot(std::shared_ptr<Snapshot> next) {
  if (!next) throw ValidationError("cannot install an empty snapshot");
  std::lock_guard lock(snapshot_mutex_);
  next->version_ = ++last_version_;
  snapshot_ = std::move(next);
  spdlog::info("serving snapshot {} from {}", snapshot_->version_, snapshot_->dir_.string());
  return last_version_;
}

json MapService::viewport(const Snapshot& snap, const BBox& box, double zoom) const {
  check_zoom(zoom);
  for (double v : {box.minx, box.miny, box.maxx, box.maxy})
    if (!std::isfinite(v)) throw ValidationError("bbox coordinates must be finite numbers");
  if (box.minx > box.maxx || box.miny > box.maxy) throw ValidationError("bbox needs minx <= maxx and miny <= maxy");

  const auto& pos = snap.map().positions;
  const auto& lod = snap.map().lod;
  json points = json::array();
  std::size_t visible = 0;
  for (auto row : snap.zoom_order()) {
    if (!lod.visible(row, zoom)) break;  // the rest of the order is hidden too
    const auto& p = pos[row];
    if (p.x < box.minx || p.x > box.maxx || p.y < box.miny || p.y > box.maxy) continue;
    ++visible;
    if (points.size() >= config_.viewport_cap) continue;
    points.push_back({{"id", snap.records()[row].id}, {"x", p.x}, {"y", p.y}, {"preview", lod.preview[row] != 0}});
  }

  const auto& b = snap.map().grid.bounds;
  const double opacity = density_opacity(zoom);
  json tiles = json::array();
  const auto level = tile_level(zoom);
  if (opacity > 0) {
    const std::uint32_t n = 1u << level;
    const auto x0 = tile_index(box.minx, b.minx, b.maxx, n), x1 = tile_index(box.maxx, b.minx, b.maxx, n);
    // Tile rows count down from maxy.
    const auto y0 = n - 1 - tile_index(box.maxy, b.miny, b.maxy, n), y1 = n - 1 - tile_index(box.miny, b.miny, b.maxy, n);
    const bool overlaps = box.maxx >= b.minx && box.minx <= b.maxx && box.maxy >= b.miny && box.miny <= b.maxy;
    if (overlaps)
      for (auto y = y0; y <= y1; ++y)
        for (auto x = x0; x <= x1; ++x)
          tiles.push_back({{"z", level},
                           {"x", x},
                           {"y", y},
                           {"url", "/api/tile/" + std::to_string(level) + "/" + std::to_string(x) + "/" +
                                       std::to_string(y) + ".png"}});
  }

  json out;
  out["snapshot_version"] = snap.version();
  out["zoom"] = zoom;
  out["bbox"] = {box.minx, box.miny, box.maxx, box.maxy};
  out["points"] = std::move(points);
  out["visible_count"] = visible;
  out["truncated"] = visible > config_.viewport_cap;
  out["density"] = {{"opacity", opacity},
                    {"tile_zoom", level},
                    {"bounds", {b.minx, b.miny, b.maxx, b.maxy}},
                    {"tiles", std::move(tiles)}};
  out["labels"] = labels(snap, zoom)["labels"];
  return out;
}

json MapService::labels(const Snapshot& snap, double zoom) const {
  check_zoom(zoom);
  json arr = json::array();
  for (const auto& a : labels_at(snap.map().anchors, zoom))
    arr.push_back({{"text", a.text}, {"x", a.position.x}, {"y", a.position.y}, {"rank", a.rank}, {"min_zoom", a.min_zoom}});
  return {{"snapshot_version", snap.version()}, {"zoom", zoom}, {"labels", std::move(arr)}};
}

json MapService::search(const Snapshot& snap, const json& req) const {
  if (!req.is_object()) throw ValidationError("search body must be a JSON object");
  const auto q = req.find("query");
  if (q == req.end() || !q->is_string() || q->get<std::string>().empty())
    throw ValidationError("search needs a non-empty string 'query'");
  std::string field = "prompt";
  if (auto f = req.find("field"); f != req.end()) {
    if (!f->is_string()) throw ValidationError("'field' must be a string");
    field = f->get<std::string>();
  }
  check_search_field(field);
  std::size_t k = config_.default_search_k;
  if (auto kk = req.find("k"); kk != req.end()) {
    if (!kk->is_number_integer() || kk->get<long long>() < 1)
      throw ValidationError("'k' must be a positive integer");
    k = kk->get<std::size_t>();
  }
  if (k > config_.max_search_k)
    throw ValidationError("'k' must be at most " + std::to_string(config_.max_search_k));
  bool exact = false;
  if (auto e = req.find("exact"); e != req.end()) {
    if (!e->is_boolean()) throw ValidationError("'exact' must be a boolean");
    exact = e->get<bool>();
  }
  const FieldData* fd = snap.field(field);
  if (!fd) throw ValidationError("field '" + field + "' was not embedded in this snapshot");

  const auto query = embed_one(snap.embedder(), q->get<std::string>());
  std::vector<SearchHit> hits;
  const auto lookup = [&](std::uint64_t id) -> std::span<const float> {
    const auto row = snap.row_of(id);
    if (!row) throw NotFound("indexed id " + std::to_string(id) + " is not in the snapshot");
    return fd->matrix.row(*row);
  };
  if (fd->index && !exact) {
    hits = fd->index->search(query, k);
  } else if (fd->index) {
    hits = fd->index->search_exact_rerank(query, k, fd->index->size(), fd->index->params().nlist, lookup);
  } else {
    // Too small for an index: exact scan.
    const auto& m = fd->matrix;
    std::vector<std::pair<double, std::uint64_t>> all(m.count());
    for (std::size_t r = 0; r < m.count(); ++r)
      all[r] = {l2_sq_exact(query.data(), m.row(r).data(), m.dim()), snap.records()[r].id};
    const auto take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + take, all.end());
    for (std::size_t i = 0; i < take; ++i) hits.push_back({all[i].second, static_cast<float>(all[i].first)});
  }

  json arr = json::array();
  for (const auto& h : hits) {
    const auto row = snap.row_of(h.id);
    if (!row) continue;
    const auto& p = snap.map().positions[*row];
    arr.push_back({{"id", h.id}, {"score", h.score}, {"x", p.x}, {"y", p.y}, {"highlight", true}});
  }
  return {{"snapshot_version", snap.version()},
          {"field", field},
          {"k", k},
          {"exact", exact || !fd->index},
          {"hits", std::move(arr)}};
}

json MapService::point(const Snapshot& snap, std::uint64_t id) const {
  const auto row = snap.row_of(id);
  if (!row) throw NotFound("no point with id " + std::to_string(id));
  const auto& r = snap.records()[*row];
  json ann = json::object(), lin = json::object();
  for (auto f : AnnotationSet::kFields) ann[std::string(f)] = r.annotations.field(f);
  for (auto f : ExpansionLineage::kFields) lin[std::string(f)] = r.lineage.field(f);
  const auto& p = snap.map().positions[*row];
  return {{"snapshot_version", snap.version()},
          {"id", r.id},
          {"prompt", r.prompt},
          {"annotations", std::move(ann)},
          {"lineage", std::move(lin)},
          {"position", {p.x, p.y}},
          {"min_zoom", snap.map().lod.min_zoom[*row]},
          {"preview", snap.map().lod.preview[*row] != 0},
          {"image_key", r.image_ref ? json(*r.image_ref) : json(nullptr)},
          {"image_url", r.image_ref ? json(image_url(*r.image_ref)) : json(nullptr)}};
}

std::optional<KvValue> MapService::image(const Snapshot& snap, const std::string& key) const {
  if (key.empty()) return std::nullopt;
  if (snap.images())
    if (auto v = snap.images()->get(key)) return v;
  if (generated_) return generated_->get(key);
  return std::nullopt;
}

json MapService::generate(const std::string& session, const json& req) {
  if (!req.is_object()) throw ValidationError("generate body must be a JSON object");
  const auto p = req.find("prompt");
  if (p == req.end() || !p->is_string()) throw ValidationError("generate needs a string 'prompt'");
  const auto prompt = p->get<std::string>();
  if (prompt.find_first_not_of(" \t\r\n") == std::string::npos) throw ValidationError("prompt must not be empty");
  std::uint64_t seed = config_.default_image_seed;
  if (auto s = req.find("seed"); s != req.end() && !s->is_null()) {
    if (!s->is_number_integer() || (s->is_number_integer() && !s->is_number_unsigned() && s->get<long long>() < 0))
      throw ValidationError("'seed' must be a non-negative integer");
    seed = s->get<std::uint64_t>();
  }
  if (!image_backend_ || !generated_) throw ValidationError("image generation is disabled");

  std::string key;
  {
    generate_slots_.acquire();
    struct Release {
      std::counting_semaphore<64>& s;
      ~Release() { s.release(); }
    } release{generate_slots_};
    key = generate_and_store(*image_backend_, *generated_, prompt, seed);
  }

  HistoryEntry entry;
  {
    std::lock_guard lock(history_mutex_);
    auto& s = sessions_[session];
    entry = {s.next_id++, prompt, seed, key};
    s.entries.push_back(entry);
    if (s.entries.size() > config_.history_cap)
      s.entries.erase(s.entries.begin(), s.entries.begin() + static_cast<std::ptrdiff_t>(s.entries.size() - config_.history_cap));
  }
  const auto snap = snapshot();
  return {{"snapshot_version", snap->version()},
          {"id", entry.id},
          {"prompt", entry.prompt},
          {"seed", entry.seed},
          {"image_key", entry.key},
          {"image_url", image_url(entry.key)}};
}

json MapService::history(const std::string& session) const {
  json arr = json::array();
  {
    std::lock_guard lock(history_mutex_);
    if (auto it = sessions_.find(session); it != sessions_.end())
      for (const auto& e : it->second.entries)
        arr.push_back({{"id", e.id}, {"prompt", e.prompt}, {"seed", e.seed}, {"image_key", e.key},
                       {"image_url", image_url(e.key)}});
  }
  return {{"snapshot_version", snapshot()->version()}, {"entries", std::move(arr)}};
}

bool MapService::delete_history(const std::string& session, std::uint64_t id) {
  std::lock_guard lock(history_mutex_);
  auto it = sessions_.find(session);
  if (it == sessions_.end()) return false;
  auto& entries = it->second.entries;
  const auto e = std::find_if(entries.begin(), entries.end(), [&](const HistoryEntry& h) { return h.id == id; });
  if (e == entries.end()) return false;
  entries.erase(e);
  return true;
}

}  // namespace atlas
