#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "atlas/corpus.hpp"
#include "atlas/remote.hpp"

namespace atlas {

// Expansion stages in pipeline order. Category is the seed list itself.
enum class Stage { Category, Subcategory, Subsubcategory, Idea, Location, Subject, Prompt, Annotation };

std::string_view stage_name(Stage stage);
Stage stage_from_name(std::string_view name);

// One backend call: "give me n children of this parent".
struct StageRequest {
  Stage stage = Stage::Subcategory;
  std::string instruction;  // rendered template text
  std::size_t n = 1;
  std::uint64_t seed = 0;
  nlohmann::json context;  // parent chain, keyed by lineage field name
};

// Instruction text per stage. Defaults are built in; a directory holding
// `<stage>.txt` files overrides them. `{key}` placeholders are filled from the
// request context plus `{n}`.
class InstructionTemplates {
 public:
  InstructionTemplates();
  static InstructionTemplates from_directory(const std::filesystem::path& dir);

  // `name` is a stage name or "label".
  std::string render(std::string_view name, std::size_t n, const nlohmann::json& context) const;
  const std::string& raw(std::string_view name) const;

 private:
  std::map<std::string, std::string, std::less<>> text_;
};

class TextBackend {
 public:
  virtual ~TextBackend() = default;

  virtual std::string id() const = 0;
  // Up to request.n items; fewer is a shortfall, not an error.
  virtual std::vector<std::string> expand(const StageRequest& request) = 0;
  virtual std::string compose(const std::string& idea, const std::string& location, const std::string& subject,
                              std::uint64_t seed) = 0;
  // Must return lighting, tone, mood and genre; location and subject may be
  // left empty and are then taken from the lineage.
  virtual AnnotationSet annotate(const std::string& prompt, const ExpansionLineage& lineage, std::uint64_t seed) = 0;
  // Short map label summarizing the given subject captions.
  virtual std::string label(std::span<const std::string> subjects) = 0;
};

// Deterministic template generator. Output depends only on the request seed
// and inputs, never on call order.
class TemplateMockBackend final : public TextBackend {
 public:
  std::string id() const override { return "template-mock"; }
  std::vector<std::string> expand(const StageRequest& request) override;
  std::string compose(const std::string& idea, const std::string& location, const std::string& subject,
                      std::uint64_t seed) override;
  AnnotationSet annotate(const std::string& prompt, const ExpansionLineage& lineage, std::uint64_t seed) override;
  std::string label(std::span<const std::string> subjects) override;

  // Lighting forced by keywords in the prompt ("sunset" -> "golden hour").
  static const std::vector<std::pair<std::string, std::string>>& lighting_rules();
};

// POST {"instruction", "n", "context"} -> {"items": [...]}.
class RemoteLlmBackend final : public TextBackend {
 public:
  RemoteLlmBackend(RemoteEndpoint endpoint, InstructionTemplates templates, std::size_t max_in_flight = 4);

  std::string id() const override { return "remote-llm"; }
  std::vector<std::string> expand(const StageRequest& request) override;
  std::string compose(const std::string& idea, const std::string& location, const std::string& subject,
                      std::uint64_t seed) override;
  AnnotationSet annotate(const std::string& prompt, const ExpansionLineage& lineage, std::uint64_t seed) override;
  std::string label(std::span<const std::string> subjects) override;

 private:
  nlohmann::json call(std::string_view name, std::size_t n, const nlohmann::json& context, std::uint64_t seed);

  RemoteEndpoint endpoint_;
  InstructionTemplates templates_;
  std::counting_semaphore<> in_flight_;
};

// Validating wrappers used by the pipeline.
std::string compose_prompt(TextBackend& backend, const std::string& idea, const std::string& location,
                           const std::string& subject, std::uint64_t seed);
AnnotationSet annotate_prompt(TextBackend& backend, const std::string& prompt, const ExpansionLineage& lineage,
                              std::uint64_t seed);

// Words ignored by label generation.
bool is_stopword(std::string_view token);

}  // namespace atlas
