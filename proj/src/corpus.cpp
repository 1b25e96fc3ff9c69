#include "atlas/corpus.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "atlas/binio.hpp"
#include "atlas/error.hpp"

namespace atlas {

using nlohmann::json;

namespace {

template <typename Struct>
std::string* field_ptr(Struct& s, std::string_view name);

template <>
std::string* field_ptr(AnnotationSet& a, std::string_view name) {
  if (name == "location") return &a.location;
  if (name == "subject") return &a.subject;
  if (name == "lighting") return &a.lighting;
  if (name == "tone") return &a.tone;
  if (name == "mood") return &a.mood;
  if (name == "genre") return &a.genre;
  return nullptr;
}

template <>
std::string* field_ptr(ExpansionLineage& l, std::string_view name) {
  if (name == "category") return &l.category;
  if (name == "subcategory") return &l.subcategory;
  if (name == "subsubcategory") return &l.subsubcategory;
  if (name == "idea_caption") return &l.idea_caption;
  if (name == "location_caption") return &l.location_caption;
  if (name == "subject_caption") return &l.subject_caption;
  return nullptr;
}

template <typename Struct>
std::string& checked_field(Struct& s, std::string_view name, std::string_view kind) {
  if (auto* p = field_ptr(s, name)) return *p;
  throw ValidationError("unknown " + std::string(kind) + " field '" + std::string(name) + "'");
}

template <typename Struct>
json fields_to_json(const Struct& s) {
  json out = json::object();
  for (auto name : Struct::kFields) out[std::string(name)] = s.field(name);
  return out;
}

template <typename Struct>
Struct fields_from_json(const json& j, std::string_view kind) {
  if (!j.is_object()) throw FormatError(std::string(kind) + " must be an object");
  Struct s;
  for (auto name : Struct::kFields) {
    auto it = j.find(std::string(name));
    if (it == j.end()) throw FormatError(std::string(kind) + " missing '" + std::string(name) + "'");
    s.field(name) = it->template get<std::string>();
  }
  return s;
}

json record_to_json(const PromptRecord& r) {
  json j;
  j["id"] = r.id;
  j["prompt"] = r.prompt;
  j["lineage"] = fields_to_json(r.lineage);
  j["annotations"] = fields_to_json(r.annotations);
  j["embedding_row"] = r.embedding_row ? json(*r.embedding_row) : json(nullptr);
  j["position"] = r.position ? json::array({r.position->x, r.position->y}) : json(nullptr);
  j["image_ref"] = r.image_ref ? json(*r.image_ref) : json(nullptr);
  j["nsfw"] = r.nsfw_flagged;
  return j;
}

PromptRecord record_from_json(const json& j) {
  PromptRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  r.prompt = j.at("prompt").get<std::string>();
  r.lineage = fields_from_json<ExpansionLineage>(j.at("lineage"), "lineage");
  r.annotations = fields_from_json<AnnotationSet>(j.at("annotations"), "annotations");
  if (auto it = j.find("embedding_row"); it != j.end() && !it->is_null())
    r.embedding_row = it->get<std::uint64_t>();
  if (auto it = j.find("position"); it != j.end() && !it->is_null()) {
    if (!it->is_array() || it->size() != 2) throw FormatError("position must be [x, y]");
    r.position = Point2{(*it)[0].get<double>(), (*it)[1].get<double>()};
  }
  if (auto it = j.find("image_ref"); it != j.end() && !it->is_null())
    r.image_ref = it->get<std::string>();
  if (auto it = j.find("nsfw"); it != j.end()) r.nsfw_flagged = it->get<bool>();
  if (r.prompt.empty()) throw FormatError("empty prompt");
  return r;
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  return tmp;
}

void commit_temp(const std::filesystem::path& tmp, const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void check_row(std::span<const float> row, std::size_t index) {
  double norm = 0;
  for (float v : row) {
    if (!std::isfinite(v))
      throw ValidationError("embedding row " + std::to_string(index) + " has a non-finite entry");
    norm += static_cast<double>(v) * v;
  }
  norm = std::sqrt(norm);
  if (std::abs(norm - 1.0) > EmbeddingMatrix::kNormTolerance)
    throw ValidationError("embedding row " + std::to_string(index) + " is not normalized (norm " +
                          std::to_string(norm) + ")");
}

}  // namespace

const std::string& AnnotationSet::field(std::string_view name) const {
  return checked_field(const_cast<AnnotationSet&>(*this), name, "annotation");
}
std::string& AnnotationSet::field(std::string_view name) { return checked_field(*this, name, "annotation"); }
bool AnnotationSet::complete() const {
  for (auto name : kFields)
    if (field(name).empty()) return false;
  return true;
}

const std::string& ExpansionLineage::field(std::string_view name) const {
  return checked_field(const_cast<ExpansionLineage&>(*this), name, "lineage");
}
std::string& ExpansionLineage::field(std::string_view name) { return checked_field(*this, name, "lineage"); }
bool ExpansionLineage::complete() const {
  for (auto name : kFields)
    if (field(name).empty()) return false;
  return true;
}

EmbeddingMatrix::EmbeddingMatrix(std::uint32_t dim) : dim_(dim) {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
}

EmbeddingMatrix::EmbeddingMatrix(std::uint32_t dim, std::vector<float> data) : dim_(dim), data_(std::move(data)) {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
  if (data_.size() % dim != 0)
    throw ValidationError("embedding data length " + std::to_string(data_.size()) +
                          " is not a multiple of dim " + std::to_string(dim));
  for (std::size_t i = 0; i < count(); ++i) check_row(row(i), i);
}

EmbeddingMatrix EmbeddingMatrix::from_unnormalized(std::uint32_t dim, std::vector<float> data) {
  if (dim == 0 || data.size() % dim != 0) throw ValidationError("bad embedding shape");
  for (std::size_t off = 0; off < data.size(); off += dim) {
    double norm = 0;
    for (std::size_t j = 0; j < dim; ++j) norm += static_cast<double>(data[off + j]) * data[off + j];
    if (!(norm > 0) || !std::isfinite(norm))
      throw ValidationError("cannot normalize row " + std::to_string(off / dim));
    const double inv = 1.0 / std::sqrt(norm);
    for (std::size_t j = 0; j < dim; ++j) data[off + j] = static_cast<float>(data[off + j] * inv);
  }
  return EmbeddingMatrix(dim, std::move(data));
}

std::span<const float> EmbeddingMatrix::row(std::size_t i) const {
  if (i >= count()) throw ValidationError("embedding row " + std::to_string(i) + " out of range");
  return std::span<const float>(data_).subspan(i * dim_, dim_);
}

void EmbeddingMatrix::push_row(std::span<const float> r) {
  if (r.size() != dim_) throw ValidationError("row dimension mismatch");
  check_row(r, count());
  data_.insert(data_.end(), r.begin(), r.end());
}

bool EmbeddingMatrix::operator==(const EmbeddingMatrix& other) const {
  if (dim_ != other.dim_ || data_.size() != other.data_.size()) return false;
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

WriteSummary write_corpus(std::span<const PromptRecord> records, const std::filesystem::path& path) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(records.size());
  for (const auto& r : records) {
    if (!seen.insert(r.id).second) throw ValidationError("duplicate record id " + std::to_string(r.id));
    if (r.prompt.empty()) throw ValidationError("record " + std::to_string(r.id) + " has an empty prompt");
  }
  const auto tmp = temp_sibling(path);
  {
    auto out = open_for_write(tmp);
    for (const auto& r : records) out << record_to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  commit_temp(tmp, path);
  return {records.size(), std::filesystem::file_size(path)};
}

std::vector<PromptRecord> read_corpus(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  std::vector<PromptRecord> records;
  std::unordered_set<std::uint64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(records.back().id).second)
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": duplicate id " +
                        std::to_string(records.back().id));
  }
  return records;
}

std::uintmax_t write_float_rows(std::uint32_t dim, std::span<const float> data,
                                const std::filesystem::path& path) {
  if (dim == 0 || data.size() % dim != 0) throw ValidationError("bad float row shape");
  const auto tmp = temp_sibling(path);
  {
    auto out = open_for_write(tmp);
    binio::put_magic(out, "PATL");
    binio::put<std::uint32_t>(out, kEmbeddingFormatVersion);
    binio::put<std::uint32_t>(out, dim);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(data.size() / dim));
    binio::put_span(out, data);
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  commit_temp(tmp, path);
  return std::filesystem::file_size(path);
}

std::vector<float> read_float_rows(const std::filesystem::path& path, std::uint32_t& dim) {
  auto in = open_for_read(path);
  binio::expect_magic(in, "PATL");
  const auto version = binio::get<std::uint32_t>(in, "version");
  if (version != kEmbeddingFormatVersion)
    throw FormatError("unsupported embedding format version " + std::to_string(version));
  dim = binio::get<std::uint32_t>(in, "dim");
  const auto count = binio::get<std::uint32_t>(in, "count");
  if (dim == 0) throw FormatError("zero dim");
  std::vector<float> data(static_cast<std::size_t>(dim) * count);
  binio::get_span(in, std::span<float>(data), "payload");
  if (in.peek() != std::ifstream::traits_type::eof()) throw FormatError("trailing bytes after payload");
  return data;
}

std::uintmax_t write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  return write_float_rows(matrix.dim(), matrix.data(), path);
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  std::uint32_t dim = 0;
  auto data = read_float_rows(path, dim);
  return EmbeddingMatrix(dim, std::move(data));
}

}  // namespace atlas
