#include "atlas/artifacts.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "atlas/error.hpp"

namespace atlas {

bool is_search_field(std::string_view field) {
  return std::find(kSearchFields.begin(), kSearchFields.end(), field) != kSearchFields.end();
}

void check_search_field(std::string_view field) {
  if (is_search_field(field)) return;
  std::string valid;
  for (auto f : kSearchFields) valid += (valid.empty() ? "" : ", ") + std::string(f);
  throw ValidationError("unknown field '" + std::string(field) + "'; valid fields: " + valid);
}

const std::string& field_text(const PromptRecord& record, std::string_view field) {
  if (field == "prompt") return record.prompt;
  check_search_field(field);
  return record.annotations.field(field);
}

std::filesystem::path embeddings_path(const std::filesystem::path& dir, std::string_view field) {
  return dir / ("emb-" + std::string(field) + ".bin");
}

std::filesystem::path index_path(const std::filesystem::path& dir, std::string_view field) {
  return dir / ("index-" + std::string(field) + ".pidx");
}

nlohmann::json embedder_to_json(const EmbedderSpec& spec) {
  return {{"backend", spec.backend == EmbedderBackend::FeatureHash ? "feature-hash" : "remote"},
          {"dim", spec.dim},
          {"seed", spec.seed},
          {"remote", {{"url", spec.remote.url}}}};
}

EmbedderSpec embedder_from_json(const nlohmann::json& j) {
  EmbedderSpec s;
  const auto backend = j.value("backend", std::string("feature-hash"));
  if (backend == "remote") s.backend = EmbedderBackend::Remote;
  else if (backend != "feature-hash") throw ValidationError("unknown embedder backend '" + backend + "'");
  s.dim = j.value("dim", s.backend == EmbedderBackend::Remote ? EmbedderSpec::kDefaultRemoteDim
                                                              : EmbedderSpec::kDefaultOfflineDim);
  s.seed = j.value("seed", s.seed);
  if (auto r = j.find("remote"); r != j.end() && r->is_object()) {
    s.remote.url = r->value("url", "");
    s.remote.token = r->value("token", "");
  }
  return s;
}

std::vector<std::size_t> served_rows(std::span<const PromptRecord> records) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!records[i].nsfw_flagged) out.push_back(i);
  return out;
}

EmbedReport embed_corpus(const std::filesystem::path& dir, const EmbedderSpec& spec,
                         std::span<const std::string> fields) {
  spec.validate();
  for (const auto& f : fields) check_search_field(f);
  auto records = read_corpus(dir / kCorpusFile);
  const auto rows = served_rows(records);
  for (auto& r : records) r.embedding_row.reset();
  for (std::size_t i = 0; i < rows.size(); ++i) records[rows[i]].embedding_row = i;

  EmbedReport report;
  report.rows = rows.size();
  for (const auto& f : fields) {
    std::vector<std::string> texts;
    texts.reserve(rows.size());
    for (auto i : rows) texts.push_back(field_text(records[i], f));
    const auto m = texts.empty() ? EmbeddingMatrix(spec.dim) : embed_batch(spec, texts);
    write_embeddings(m, embeddings_path(dir, f));
    report.fields.push_back(f);
  }
  {
    std::ofstream out(dir / kEmbedderFile, std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / kEmbedderFile).string());
    out << embedder_to_json(spec).dump(2) << '\n';
  }
  write_corpus(records, dir / kCorpusFile);
  return report;
}

std::vector<IndexReport> index_corpus(const std::filesystem::path& dir, const IvfPqParams& params,
                                      std::span<const std::string> fields) {
  const auto records = read_corpus(dir / kCorpusFile);
  std::vector<std::uint64_t> ids;  // by embedding row
  for (const auto& r : records) {
    if (!r.embedding_row) continue;
    if (*r.embedding_row >= ids.size()) ids.resize(*r.embedding_row + 1);
    ids[*r.embedding_row] = r.id;
  }
  std::vector<IndexReport> out;
  for (const auto& f : fields) {
    check_search_field(f);
    const auto m = read_embeddings(embeddings_path(dir, f));
    if (m.count() != ids.size())
      throw ValidationError("emb-" + f + ".bin has " + std::to_string(m.count()) + " rows but the corpus references " +
                            std::to_string(ids.size()));
    IndexReport rep;
    rep.field = f;
    rep.vectors = m.count();
    rep.params = params;
    if (params.m == 0 || m.dim() % params.m != 0) rep.params.m = default_subquantizers(m.dim());
    const std::size_t n = m.count();
    if (n < IvfPqParams::kCodewords) {
      spdlog::warn("field {}: {} rows is below the {} needed to train PQ codebooks; no index written, search scans "
                   "exactly",
                   f, n, IvfPqParams::kCodewords);
      std::filesystem::remove(index_path(dir, f));
      out.push_back(rep);
      continue;
    }
    // Keep roughly 39 training points per cell at least.
    const auto max_nlist = static_cast<std::uint32_t>(std::max<std::size_t>(1, n / 39));
    if (rep.params.nlist > max_nlist) {
      spdlog::warn("field {}: nlist {} reduced to {} for {} rows", f, rep.params.nlist, max_nlist, n);
      rep.params.nlist = max_nlist;
    }
    rep.params.nprobe = std::min(rep.params.nprobe, rep.params.nlist);
    auto index = IvfPqIndex::train(rep.params, m);
    index.add(ids, m);
    index.save(index_path(dir, f));
    rep.written = true;
    out.push_back(rep);
  }
  return out;
}

MapLayout layout_corpus(const std::filesystem::path& dir, const MapBuildParams& params, TextBackend& labeler) {
  check_search_field(params.field);
  auto records = read_corpus(dir / kCorpusFile);
  const auto m = read_embeddings(embeddings_path(dir, params.field));
  std::vector<const PromptRecord*> by_row(m.count(), nullptr);
  for (const auto& r : records) {
    if (!r.embedding_row) continue;
    if (*r.embedding_row >= m.count())
      throw ValidationError("record " + std::to_string(r.id) + " references a missing embedding row");
    by_row[*r.embedding_row] = &r;
  }
  for (std::size_t i = 0; i < by_row.size(); ++i)
    if (!by_row[i]) throw ValidationError("embedding row " + std::to_string(i) + " has no record");

  const std::size_t n = m.count();
  MapLayout map;
  auto lp = params.layout;
  if (n == 2) throw ValidationError("at least 3 records are needed to lay out a map");
  if (n >= 3 && n <= lp.n_neighbors) {
    spdlog::warn("n_neighbors {} clamped to {} for {} records", lp.n_neighbors, n - 1, n);
    lp.n_neighbors = static_cast<std::uint32_t>(n - 1);
  }
  map.positions = layout(MatrixView(m), lp);
  map.grid = density_grid(map.positions);

  std::vector<std::string> subjects(n);
  std::vector<std::uint64_t> ids(n);
  std::vector<std::uint8_t> has_image(n);
  for (std::size_t i = 0; i < n; ++i) {
    subjects[i] = by_row[i]->annotations.subject;
    ids[i] = by_row[i]->id;
    has_image[i] = by_row[i]->image_ref.has_value();
  }
  std::set<std::pair<double, double>> distinct;
  for (const auto& p : map.positions) distinct.emplace(p.x, p.y);
  auto k = params.k_anchors;
  if (k > distinct.size()) {
    spdlog::warn("k_anchors {} clamped to {} distinct positions", k, distinct.size());
    k = static_cast<std::uint32_t>(distinct.size());
  }
  map.anchors = place_labels(map.positions, subjects, k, labeler, lp.seed);
  map.lod = assign_lod(ids, has_image, params.lod);

  save_map(map, dir);
  for (auto& r : records)
    if (r.embedding_row) r.position = map.positions[*r.embedding_row];
    else r.position.reset();
  write_corpus(records, dir / kCorpusFile);
  return map;
}

void save_map(const MapLayout& map, const std::filesystem::path& dir) {
  std::vector<float> flat(map.positions.size() * 2);
  for (std::size_t i = 0; i < map.positions.size(); ++i) {
    flat[2 * i] = static_cast<float>(map.positions[i].x);
    flat[2 * i + 1] = static_cast<float>(map.positions[i].y);
  }
  write_float_rows(2, flat, dir / kPositionsFile);
  save_grid(map.grid, dir / kGridFile);
  save_anchors(map.anchors, dir / kAnchorsFile);
  save_lod(map.lod, dir / kLodFile);
}

MapLayout load_map(const std::filesystem::path& dir) {
  MapLayout map;
  std::uint32_t dim = 0;
  const auto flat = read_float_rows(dir / kPositionsFile, dim);
  if (dim != 2) throw FormatError((dir / kPositionsFile).string() + ": expected 2 columns");
  map.positions.resize(flat.size() / 2);
  for (std::size_t i = 0; i < map.positions.size(); ++i) map.positions[i] = {flat[2 * i], flat[2 * i + 1]};
  map.grid = load_grid(dir / kGridFile);
  map.anchors = load_anchors(dir / kAnchorsFile);
  map.lod = load_lod(dir / kLodFile);
  if (map.lod.size() != map.positions.size())
    throw FormatError("lod.bin and positions.bin disagree on the record count");
  return map;
}

}  // namespace atlas
