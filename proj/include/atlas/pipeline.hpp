#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/corpus.hpp"
#include "atlas/dedup.hpp"
#include "atlas/embedder.hpp"
#include "atlas/image_backend.hpp"
#include "atlas/nsfw.hpp"
#include "atlas/text_backend.hpp"

namespace atlas {

struct Fanout {
  std::size_t subcats = 10;
  std::size_t subsubcats = 10;
  std::size_t ideas = 20;
  std::size_t locations = 10;
  std::size_t subjects = 5;

  // Children requested per parent; Prompt and Annotation are 1:1.
  std::size_t of(Stage stage) const;
};

enum class GeneratorKind { TemplateMock, RemoteLlm };
enum class ImageKind { None, Procedural, Remote };

struct GenerationConfig {
  std::vector<std::string> categories;  // empty: seed_categories()
  // Passes over the seed categories whose subcategory outputs are pooled
  // before the first dedup.
  std::size_t passes = 1;
  Fanout fanout;
  std::optional<DedupParams> dedup = DedupParams{};  // nullopt: no dedup
  EmbedderSpec embedder;                              // used by dedup
  std::uint64_t seed = 42;
  GeneratorKind backend = GeneratorKind::TemplateMock;
  RemoteEndpoint llm;
  std::filesystem::path templates_dir;  // empty: built-in instructions
  NsfwConfig nsfw;
  ImageKind images = ImageKind::Procedural;
  RemoteEndpoint image_service;
  std::size_t max_in_flight = 4;

  void validate() const;
  // Canonical JSON of everything that influences output content.
  nlohmann::json to_json() const;
  static GenerationConfig from_json(const nlohmann::json& j);
  std::string fingerprint() const;
};

// 160 placeholder image categories shipped with the tool. The wording is
// original; only the count mirrors the reference setup.
const std::vector<std::string>& seed_categories();

struct StageItem {
  std::uint64_t id = 0;
  std::uint64_t parent = 0;  // id in the previous stage; categories point at themselves
  std::uint64_t seed = 0;
  std::string text;
  bool operator==(const StageItem&) const = default;
};

struct StageOutput {
  Stage stage = Stage::Category;
  std::vector<StageItem> items;
};

struct StageReport {
  Stage stage = Stage::Category;
  std::size_t parents = 0;
  std::size_t requested = 0;
  std::size_t produced = 0;
  std::size_t shortfall = 0;
  std::size_t dedup_removed = 0;
  std::size_t output = 0;
  double seconds = 0;
  bool resumed = false;
};

// Child seed = hash(parent seed, stage, parent id, ordinal).
std::uint64_t child_seed(std::uint64_t parent_seed, Stage stage, std::uint64_t parent_id, std::uint64_t ordinal);

StageOutput seed_stage(const GenerationConfig& config);

// Stage outputs from the seed categories down to the last completed stage.
// Item ids are positions within their stage, so lineage resolves by index.
class ExpansionTree {
 public:
  // `output.stage` must be the stage after last() (or Category when empty).
  void push(StageOutput output);

  bool empty() const noexcept { return stages_.empty(); }
  Stage last() const;
  bool has(Stage stage) const;
  const StageOutput& stage(Stage stage) const;

  // Lineage fields up to and including `stage` for item `index` of that stage.
  ExpansionLineage lineage(Stage stage, std::size_t index) const;
  // Same fields as a JSON object, keyed by lineage field name.
  nlohmann::json context(Stage stage, std::size_t index) const;

 private:
  std::vector<StageOutput> stages_;
};

// Asks the backend for fanout children of every item of the preceding stage,
// pools them in parent order, then deduplicates the pooled texts. For Prompt,
// each subject yields one composed prompt.
StageOutput expand_stage(const GenerationConfig& config, TextBackend& backend, Stage stage,
                         const ExpansionTree& tree, StageReport& report);

// One annotation set per prompt item.
std::vector<AnnotationSet> annotate_stage(const GenerationConfig& config, TextBackend& backend,
                                          const ExpansionTree& tree, StageReport& report);

struct PipelineResult {
  std::filesystem::path corpus_path;
  std::filesystem::path manifest_path;
  nlohmann::json manifest;
  std::vector<PromptRecord> records;
};

std::unique_ptr<TextBackend> make_text_backend(const GenerationConfig& config);
std::unique_ptr<ImageBackend> make_image_backend(ImageKind kind, const RemoteEndpoint& endpoint);

// Runs every stage into `out_dir`: stage-<name>.jsonl checkpoints, corpus.jsonl,
// images.db, manifest.json. Completed stages whose checkpoints match the
// config fingerprint are reused. On a backend failure the partial stage is
// written to stage-<name>.partial.jsonl, the manifest records the failure and
// the error is rethrown.
PipelineResult run_pipeline(const GenerationConfig& config, const std::filesystem::path& out_dir,
                            TextBackend* backend_override = nullptr);

}  // namespace atlas
