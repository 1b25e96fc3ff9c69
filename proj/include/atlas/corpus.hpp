#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace atlas {

// Predicted attributes of a prompt's output image.
struct AnnotationSet {
  std::string location;
  std::string subject;
  std::string lighting;
  std::string tone;
  std::string mood;
  std::string genre;

  static constexpr std::array<std::string_view, 6> kFields = {"location", "subject", "lighting",
                                                              "tone",     "mood",    "genre"};

  // Field by name; throws ValidationError on an unknown name.
  const std::string& field(std::string_view name) const;
  std::string& field(std::string_view name);

  bool complete() const;
  bool operator==(const AnnotationSet&) const = default;
};

// The expansion chain that produced a prompt, one text per stage.
struct ExpansionLineage {
  std::string category;
  std::string subcategory;
  std::string subsubcategory;
  std::string idea_caption;
  std::string location_caption;
  std::string subject_caption;

  static constexpr std::array<std::string_view, 6> kFields = {
      "category",     "subcategory",      "subsubcategory",
      "idea_caption", "location_caption", "subject_caption"};

  const std::string& field(std::string_view name) const;
  std::string& field(std::string_view name);

  bool complete() const;
  bool operator==(const ExpansionLineage&) const = default;
};

struct Point2 {
  double x = 0;
  double y = 0;
  bool operator==(const Point2&) const = default;
};

struct PromptRecord {
  std::uint64_t id = 0;
  std::string prompt;
  ExpansionLineage lineage;
  AnnotationSet annotations;
  std::optional<std::uint64_t> embedding_row;
  std::optional<Point2> position;
  std::optional<std::string> image_ref;
  bool nsfw_flagged = false;

  bool operator==(const PromptRecord&) const = default;
};

// Row-major float matrix whose rows are unit vectors.
class EmbeddingMatrix {
 public:
  static constexpr float kNormTolerance = 1e-4f;

  EmbeddingMatrix() = default;
  explicit EmbeddingMatrix(std::uint32_t dim);
  // Takes ownership of `data`; validates length, finiteness and row norms.
  EmbeddingMatrix(std::uint32_t dim, std::vector<float> data);

  // Normalizes each row in place before validating. Zero rows are rejected.
  static EmbeddingMatrix from_unnormalized(std::uint32_t dim, std::vector<float> data);

  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
  std::span<const float> row(std::size_t i) const;
  std::span<const float> data() const noexcept { return data_; }

  // Appends a row; must already be normalized.
  void push_row(std::span<const float> row);

  bool operator==(const EmbeddingMatrix& other) const;

 private:
  std::uint32_t dim_ = 0;
  std::vector<float> data_;
};

struct WriteSummary {
  std::size_t count = 0;
  std::uintmax_t bytes = 0;
};

// JSONL, one record per line. Throws ValidationError on duplicate ids or empty
// prompts, IoError when the path cannot be written. Writes to a sibling temp
// file and renames, so readers never observe a partial file.
WriteSummary write_corpus(std::span<const PromptRecord> records, const std::filesystem::path& path);

// Records in file order. Unknown keys are ignored. FormatError names the
// 1-based line of a malformed record; duplicate ids are a FormatError too.
std::vector<PromptRecord> read_corpus(const std::filesystem::path& path);

// "PATL" + version + dim + count, then the f32 payload.
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 16;

std::uintmax_t write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

// Same header scheme for arbitrary (not necessarily normalized) f32 rows,
// used for 2D positions.
std::uintmax_t write_float_rows(std::uint32_t dim, std::span<const float> data,
                                const std::filesystem::path& path);
std::vector<float> read_float_rows(const std::filesystem::path& path, std::uint32_t& dim);

}  // namespace atlas
