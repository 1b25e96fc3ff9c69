#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "atlas/corpus.hpp"
#include "atlas/density.hpp"
#include "atlas/embedder.hpp"
#include "atlas/ivfpq.hpp"
#include "atlas/labels.hpp"
#include "atlas/layout.hpp"
#include "atlas/lod.hpp"
#include "atlas/text_backend.hpp"

// One directory per corpus version:
//   corpus.jsonl  manifest.json  images.db  embedder.json
//   emb-<field>.bin  index-<field>.pidx
//   positions.bin  grid.bin  anchors.jsonl  lod.bin
namespace atlas {

inline constexpr std::string_view kCorpusFile = "corpus.jsonl";
inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kImagesFile = "images.db";
inline constexpr std::string_view kEmbedderFile = "embedder.json";
inline constexpr std::string_view kPositionsFile = "positions.bin";
inline constexpr std::string_view kGridFile = "grid.bin";
inline constexpr std::string_view kAnchorsFile = "anchors.jsonl";
inline constexpr std::string_view kLodFile = "lod.bin";

// Searchable fields: the prompt plus the six annotations.
inline constexpr std::array<std::string_view, 7> kSearchFields = {"prompt", "location", "subject", "lighting",
                                                                  "tone",   "mood",     "genre"};
bool is_search_field(std::string_view field);
// Throws ValidationError listing the valid fields.
void check_search_field(std::string_view field);
const std::string& field_text(const PromptRecord& record, std::string_view field);

std::filesystem::path embeddings_path(const std::filesystem::path& dir, std::string_view field);
std::filesystem::path index_path(const std::filesystem::path& dir, std::string_view field);

nlohmann::json embedder_to_json(const EmbedderSpec& spec);
EmbedderSpec embedder_from_json(const nlohmann::json& j);

// Records that are embedded, indexed and laid out: not NSFW-flagged, in corpus order.
std::vector<std::size_t> served_rows(std::span<const PromptRecord> records);

struct EmbedReport {
  std::size_t rows = 0;
  std::vector<std::string> fields;
};
// Gives every served record embedding_row = its position among served
// records, writes emb-<field>.bin for each field and embedder.json, and
// rewrites the corpus.
EmbedReport embed_corpus(const std::filesystem::path& dir, const EmbedderSpec& spec,
                         std::span<const std::string> fields);

struct IndexReport {
  std::string field;
  std::size_t vectors = 0;
  IvfPqParams params;
  bool written = false;  // false: too few rows, the service scans exactly
};
// Trains and fills one index per field from emb-<field>.bin, keyed by record
// id. nlist is reduced when the corpus is small; below the PQ training
// minimum no index is written.
std::vector<IndexReport> index_corpus(const std::filesystem::path& dir, const IvfPqParams& params,
                                      std::span<const std::string> fields);

struct MapBuildParams {
  LayoutParams layout;
  std::uint32_t k_anchors = 32;
  LodParams lod;
  std::string field = "subject";  // embedding the layout is computed from
};

struct MapLayout {
  std::vector<Point2> positions;  // one per embedding row
  DensityGrid grid;
  std::vector<LabelAnchor> anchors;
  LodAssignment lod;
};

// Layout, density grid, labels and LOD for the served records, written next
// to the corpus; positions are also stored on the records. Small corpora
// clamp n_neighbors and k_anchors with a warning.
MapLayout layout_corpus(const std::filesystem::path& dir, const MapBuildParams& params, TextBackend& labeler);

void save_map(const MapLayout& map, const std::filesystem::path& dir);
MapLayout load_map(const std::filesystem::path& dir);

}  // namespace atlas
