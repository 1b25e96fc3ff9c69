#include "atlas/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <mutex>

#include "atlas/error.hpp"
#include "atlas/hash.hpp"
#include "atlas/kv_store.hpp"
#include "atlas/parallel.hpp"

namespace atlas {

using nlohmann::json;

namespace {

constexpr Stage kExpansionOrder[] = {Stage::Subcategory, Stage::Subsubcategory, Stage::Idea,
                                     Stage::Location,    Stage::Subject,        Stage::Prompt};

std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

Stage previous(Stage s) {
  if (s == Stage::Category) throw ValidationError("category stage has no parent");
  return static_cast<Stage>(stage_index(s) - 1);
}

// Lineage field filled by each stage; Prompt and Annotation have none.
const char* lineage_field(Stage s) {
  switch (s) {
    case Stage::Category: return "category";
    case Stage::Subcategory: return "subcategory";
    case Stage::Subsubcategory: return "subsubcategory";
    case Stage::Idea: return "idea_caption";
    case Stage::Location: return "location_caption";
    case Stage::Subject: return "subject_caption";
    default: return nullptr;
  }
}

// A stage that failed part-way; carries what was produced before the failure.
class StageFailure : public BackendError {
 public:
  StageFailure(const BackendError& cause, StageOutput partial)
      : BackendError(cause.what(), cause.status(), cause.retryable()), partial_(std::move(partial)) {}
  const StageOutput& partial() const { return partial_; }

 private:
  StageOutput partial_;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, Stage s) {
  return dir / ("stage-" + std::string(stage_name(s)) + ".jsonl");
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& lines) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    for (const auto& l : lines) out << l.dump() << '\n';
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<json> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return out;
}

void write_stage(const std::filesystem::path& path, const StageOutput& out) {
  std::vector<json> lines;
  lines.reserve(out.items.size());
  for (const auto& it : out.items)
    lines.push_back({{"id", it.id}, {"parent", it.parent}, {"seed", it.seed}, {"text", it.text}});
  write_lines(path, lines);
}

StageOutput read_stage(const std::filesystem::path& path, Stage stage) {
  StageOutput out;
  out.stage = stage;
  for (const auto& j : read_lines(path))
    out.items.push_back({j.at("id").get<std::uint64_t>(), j.at("parent").get<std::uint64_t>(),
                         j.at("seed").get<std::uint64_t>(), j.at("text").get<std::string>()});
  return out;
}

json report_json(const StageReport& r) {
  return {{"stage", stage_name(r.stage)}, {"parents", r.parents},   {"requested", r.requested},
          {"produced", r.produced},       {"shortfall", r.shortfall}, {"dedup_removed", r.dedup_removed},
          {"output", r.output},           {"seconds", r.seconds},    {"resumed", r.resumed}};
}

json remote_json(const RemoteEndpoint& e) { return {{"url", e.url}}; }

RemoteEndpoint remote_from_json(const json& j) {
  RemoteEndpoint e;
  if (j.is_object()) {
    e.url = j.value("url", "");
    e.token = j.value("token", "");
  }
  return e;
}

const char* generator_name(GeneratorKind k) { return k == GeneratorKind::TemplateMock ? "template-mock" : "remote-llm"; }

const char* image_kind_name(ImageKind k) {
  switch (k) {
    case ImageKind::None: return "none";
    case ImageKind::Procedural: return "procedural";
    case ImageKind::Remote: return "remote";
  }
  return "none";
}

const char* nsfw_mode_name(NsfwMode m) {
  switch (m) {
    case NsfwMode::Blocklist: return "blocklist";
    case NsfwMode::Remote: return "remote";
    case NsfwMode::Off: return "off";
  }
  return "off";
}

// Keeps survivors of the configured dedup and renumbers ids by position.
void dedup_and_number(const GenerationConfig& config, std::vector<StageItem>& items, StageReport& report) {
  if (config.dedup && !items.empty()) {
    std::vector<std::string> texts;
    texts.reserve(items.size());
    for (const auto& it : items) texts.push_back(it.text);
    const auto keep = dedup(embed_batch(config.embedder, texts), *config.dedup);
    std::vector<StageItem> kept;
    kept.reserve(keep.size());
    for (auto i : keep) kept.push_back(std::move(items[i]));
    report.dedup_removed = items.size() - kept.size();
    items = std::move(kept);
  }
  for (std::size_t i = 0; i < items.size(); ++i) items[i].id = i;
  report.output = items.size();
}

}  // namespace

std::size_t Fanout::of(Stage stage) const {
  switch (stage) {
    case Stage::Subcategory: return subcats;
    case Stage::Subsubcategory: return subsubcats;
    case Stage::Idea: return ideas;
    case Stage::Location: return locations;
    case Stage::Subject: return subjects;
    case Stage::Prompt:
    case Stage::Annotation: return 1;
    case Stage::Category: break;
  }
  throw ValidationError("category stage has no fanout");
}

void GenerationConfig::validate() const {
  for (std::size_t f : {fanout.subcats, fanout.subsubcats, fanout.ideas, fanout.locations, fanout.subjects})
    if (f < 1) throw ValidationError("every fanout value must be >= 1");
  if (passes < 1) throw ValidationError("passes must be >= 1");
  if (categories.empty() && seed_categories().empty()) throw ValidationError("no seed categories");
  for (const auto& c : categories)
    if (c.empty()) throw ValidationError("seed categories must be non-empty");
  if (dedup) dedup->validate();
  embedder.validate();
  if (backend == GeneratorKind::RemoteLlm && llm.url.empty()) throw ValidationError("remote-llm backend needs llm.url");
  if (images == ImageKind::Remote && image_service.url.empty())
    throw ValidationError("remote image backend needs image_service.url");
  if (nsfw.mode == NsfwMode::Remote && nsfw.remote.url.empty()) throw ValidationError("remote NSFW mode needs a url");
}

json GenerationConfig::to_json() const {
  json j;
  j["categories"] = categories;
  j["passes"] = passes;
  j["fanout"] = {{"subcats", fanout.subcats},
                 {"subsubcats", fanout.subsubcats},
                 {"ideas", fanout.ideas},
                 {"locations", fanout.locations},
                 {"subjects", fanout.subjects}};
  if (dedup)
    j["dedup"] = {{"neighbors", dedup->neighbors},
                  {"cos_threshold", dedup->cos_threshold},
                  {"exact", dedup->exact},
                  {"seed", dedup->seed}};
  else
    j["dedup"] = nullptr;
  j["embedder"] = {{"backend", embedder.backend == EmbedderBackend::FeatureHash ? "feature-hash" : "remote"},
                   {"dim", embedder.dim},
                   {"seed", embedder.seed},
                   {"remote", remote_json(embedder.remote)}};
  j["seed"] = seed;
  j["backend"] = generator_name(backend);
  j["llm"] = remote_json(llm);
  j["templates_dir"] = templates_dir.string();
  j["nsfw"] = {{"mode", nsfw_mode_name(nsfw.mode)},
               {"blocklist", nsfw.blocklist},
               {"use_default_blocklist", nsfw.use_default_blocklist},
               {"remote", remote_json(nsfw.remote)}};
  j["images"] = image_kind_name(images);
  j["image_service"] = remote_json(image_service);
  return j;
}

GenerationConfig GenerationConfig::from_json(const json& j) {
  GenerationConfig c;
  if (j.contains("categories")) c.categories = j["categories"].get<std::vector<std::string>>();
  c.passes = j.value("passes", c.passes);
  if (auto f = j.find("fanout"); f != j.end()) {
    c.fanout.subcats = f->value("subcats", c.fanout.subcats);
    c.fanout.subsubcats = f->value("subsubcats", c.fanout.subsubcats);
    c.fanout.ideas = f->value("ideas", c.fanout.ideas);
    c.fanout.locations = f->value("locations", c.fanout.locations);
    c.fanout.subjects = f->value("subjects", c.fanout.subjects);
  }
  if (auto d = j.find("dedup"); d != j.end()) {
    if (d->is_null() || (d->is_boolean() && !d->get<bool>())) {
      c.dedup.reset();
    } else if (d->is_object()) {
      DedupParams p;
      p.neighbors = d->value("neighbors", p.neighbors);
      p.cos_threshold = d->value("cos_threshold", p.cos_threshold);
      p.exact = d->value("exact", p.exact);
      p.seed = d->value("seed", p.seed);
      c.dedup = p;
    }
  }
  if (auto e = j.find("embedder"); e != j.end()) {
    const auto backend = e->value("backend", std::string("feature-hash"));
    if (backend == "remote") c.embedder.backend = EmbedderBackend::Remote;
    else if (backend != "feature-hash") throw ValidationError("unknown embedder backend '" + backend + "'");
    c.embedder.dim = e->value("dim", c.embedder.backend == EmbedderBackend::Remote ? EmbedderSpec::kDefaultRemoteDim
                                                                                    : EmbedderSpec::kDefaultOfflineDim);
    c.embedder.seed = e->value("seed", c.embedder.seed);
    if (e->contains("remote")) c.embedder.remote = remote_from_json((*e)["remote"]);
  }
  c.seed = j.value("seed", c.seed);
  const auto backend = j.value("backend", std::string("template-mock"));
  if (backend == "remote-llm") c.backend = GeneratorKind::RemoteLlm;
  else if (backend != "template-mock") throw ValidationError("unknown generator backend '" + backend + "'");
  if (j.contains("llm")) c.llm = remote_from_json(j["llm"]);
  c.templates_dir = j.value("templates_dir", std::string());
  if (auto n = j.find("nsfw"); n != j.end()) {
    const auto mode = n->value("mode", std::string("blocklist"));
    if (mode == "blocklist") c.nsfw.mode = NsfwMode::Blocklist;
    else if (mode == "remote") c.nsfw.mode = NsfwMode::Remote;
    else if (mode == "off") c.nsfw.mode = NsfwMode::Off;
    else throw ValidationError("unknown nsfw mode '" + mode + "'");
    if (n->contains("blocklist")) c.nsfw.blocklist = (*n)["blocklist"].get<std::vector<std::string>>();
    c.nsfw.use_default_blocklist = n->value("use_default_blocklist", true);
    if (n->contains("remote")) c.nsfw.remote = remote_from_json((*n)["remote"]);
  }
  const auto images = j.value("images", std::string("procedural"));
  if (images == "none") c.images = ImageKind::None;
  else if (images == "procedural") c.images = ImageKind::Procedural;
  else if (images == "remote") c.images = ImageKind::Remote;
  else throw ValidationError("unknown image backend '" + images + "'");
  if (j.contains("image_service")) c.image_service = remote_from_json(j["image_service"]);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  return c;
}

std::string GenerationConfig::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash64(to_json().dump())));
  return buf;
}

std::uint64_t child_seed(std::uint64_t parent_seed, Stage stage, std::uint64_t parent_id, std::uint64_t ordinal) {
  return hash_combine({parent_seed, stage_index(stage), parent_id, ordinal});
}

StageOutput seed_stage(const GenerationConfig& config) {
  const auto& cats = config.categories.empty() ? seed_categories() : config.categories;
  StageOutput out;
  out.stage = Stage::Category;
  for (std::size_t i = 0; i < cats.size(); ++i)
    out.items.push_back({i, i, child_seed(config.seed, Stage::Category, 0, i), cats[i]});
  return out;
}

// ---- ExpansionTree ----

void ExpansionTree::push(StageOutput output) {
  const Stage expected = stages_.empty() ? Stage::Category : static_cast<Stage>(stage_index(last()) + 1);
  if (output.stage != expected)
    throw ValidationError("expansion tree expected stage '" + std::string(stage_name(expected)) + "', got '" +
                          std::string(stage_name(output.stage)) + "'");
  stages_.push_back(std::move(output));
}

Stage ExpansionTree::last() const {
  if (stages_.empty()) throw ValidationError("expansion tree is empty");
  return stages_.back().stage;
}

bool ExpansionTree::has(Stage stage) const { return stage_index(stage) < stages_.size(); }

const StageOutput& ExpansionTree::stage(Stage stage) const {
  if (!has(stage)) throw ValidationError("stage '" + std::string(stage_name(stage)) + "' has not run");
  return stages_[stage_index(stage)];
}

ExpansionLineage ExpansionTree::lineage(Stage s, std::size_t index) const {
  ExpansionLineage lin;
  for (Stage cur = s;; cur = previous(cur)) {
    const auto& items = stage(cur).items;
    if (index >= items.size())
      throw ValidationError("no item " + std::to_string(index) + " in stage '" + std::string(stage_name(cur)) + "'");
    const auto& item = items[index];
    if (const char* field = lineage_field(cur)) lin.field(field) = item.text;
    if (cur == Stage::Category) break;
    index = static_cast<std::size_t>(item.parent);
  }
  return lin;
}

json ExpansionTree::context(Stage s, std::size_t index) const {
  const auto lin = lineage(s, index);
  json ctx = json::object();
  for (auto name : ExpansionLineage::kFields)
    if (!lin.field(name).empty()) ctx[std::string(name)] = lin.field(name);
  return ctx;
}

// ---- stages ----

StageOutput expand_stage(const GenerationConfig& config, TextBackend& backend, Stage stage, const ExpansionTree& tree,
                         StageReport& report) {
  const Stage parent_stage = previous(stage);
  if (tree.empty() || tree.last() != parent_stage)
    throw ValidationError("stage '" + std::string(stage_name(stage)) + "' needs '" +
                          std::string(stage_name(parent_stage)) + "' to have completed");
  const auto& parents = tree.stage(parent_stage).items;
  const std::size_t n = config.fanout.of(stage);
  const std::size_t passes = stage == Stage::Subcategory ? config.passes : 1;

  report = {};
  report.stage = stage;
  report.parents = parents.size();
  report.requested = parents.size() * passes * n;
  const auto started = std::chrono::steady_clock::now();

  std::vector<std::vector<StageItem>> per_parent(parents.size());
  std::vector<char> done(parents.size(), 0);
  try {
    parallel_for(0, parents.size(), [&](std::size_t pi) {
      const auto& parent = parents[pi];
      auto& children = per_parent[pi];
      if (stage == Stage::Prompt) {
        const auto lin = tree.lineage(parent_stage, pi);
        const auto seed = child_seed(parent.seed, stage, parent.id, 0);
        children.push_back({0, parent.id, seed,
                            compose_prompt(backend, lin.idea_caption, lin.location_caption, lin.subject_caption, seed)});
      } else {
        const auto ctx = tree.context(parent_stage, pi);
        for (std::size_t pass = 0; pass < passes; ++pass) {
          StageRequest req{stage, {}, n, child_seed(parent.seed, stage, parent.id, pass), ctx};
          auto texts = backend.expand(req);
          if (texts.size() > n) texts.resize(n);
          for (std::size_t o = 0; o < texts.size(); ++o) {
            if (texts[o].empty()) continue;
            children.push_back({0, parent.id, child_seed(parent.seed, stage, parent.id, pass * n + o),
                                std::move(texts[o])});
          }
        }
      }
      done[pi] = 1;
    });
  } catch (const BackendError& e) {
    StageOutput partial{stage, {}};
    for (std::size_t pi = 0; pi < parents.size(); ++pi)
      if (done[pi]) partial.items.insert(partial.items.end(), per_parent[pi].begin(), per_parent[pi].end());
    throw StageFailure(e, std::move(partial));
  }

  StageOutput out{stage, {}};
  for (auto& children : per_parent)
    for (auto& c : children) out.items.push_back(std::move(c));
  report.produced = out.items.size();
  report.shortfall = report.requested - report.produced;
  dedup_and_number(config, out.items, report);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

std::vector<AnnotationSet> annotate_stage(const GenerationConfig& config, TextBackend& backend,
                                          const ExpansionTree& tree, StageReport& report) {
  (void)config;
  const auto& prompts = tree.stage(Stage::Prompt).items;
  report = {};
  report.stage = Stage::Annotation;
  report.parents = prompts.size();
  report.requested = prompts.size();
  const auto started = std::chrono::steady_clock::now();
  std::vector<AnnotationSet> out(prompts.size());
  parallel_for(0, prompts.size(), [&](std::size_t i) {
    const auto& p = prompts[i];
    out[i] = annotate_prompt(backend, p.text, tree.lineage(Stage::Subject, static_cast<std::size_t>(p.parent)),
                             child_seed(p.seed, Stage::Annotation, p.id, 0));
  });
  report.produced = report.output = out.size();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

std::unique_ptr<TextBackend> make_text_backend(const GenerationConfig& config) {
  if (config.backend == GeneratorKind::TemplateMock) return std::make_unique<TemplateMockBackend>();
  auto templates = config.templates_dir.empty() ? InstructionTemplates()
                                                : InstructionTemplates::from_directory(config.templates_dir);
  return std::make_unique<RemoteLlmBackend>(config.llm, std::move(templates), config.max_in_flight);
}

std::unique_ptr<ImageBackend> make_image_backend(ImageKind kind, const RemoteEndpoint& endpoint) {
  switch (kind) {
    case ImageKind::None: return nullptr;
    case ImageKind::Procedural: return std::make_unique<ProceduralImageBackend>();
    case ImageKind::Remote: return std::make_unique<RemoteImageBackend>(endpoint);
  }
  return nullptr;
}

// ---- run_pipeline ----

PipelineResult run_pipeline(const GenerationConfig& config, const std::filesystem::path& out_dir,
                            TextBackend* backend_override) {
  config.validate();
  std::filesystem::create_directories(out_dir);
  std::unique_ptr<TextBackend> owned;
  TextBackend* backend = backend_override;
  if (!backend) {
    owned = make_text_backend(config);
    backend = owned.get();
  }

  const auto fingerprint = config.fingerprint();
  const auto state_path = out_dir / "pipeline-state.json";
  bool resumable = false;
  if (std::filesystem::exists(state_path)) {
    std::ifstream in(state_path);
    const auto state = json::parse(in, nullptr, false);
    resumable = !state.is_discarded() && state.value("fingerprint", "") == fingerprint;
  }
  {
    std::ofstream st(state_path, std::ios::trunc);
    st << json{{"fingerprint", fingerprint}}.dump(2) << '\n';
  }

  json manifest;
  manifest["config"] = config.to_json();
  manifest["config_fingerprint"] = fingerprint;
  manifest["seed"] = config.seed;
  manifest["backend"] = backend->id();
  json stages = json::array();
  const auto manifest_path = out_dir / "manifest.json";
  auto write_manifest = [&] {
    manifest["stages"] = stages;
    std::ofstream out(manifest_path, std::ios::trunc);
    out << manifest.dump(2) << '\n';
  };

  ExpansionTree tree;
  {
    StageReport r;
    r.stage = Stage::Category;
    const auto path = checkpoint_path(out_dir, Stage::Category);
    auto seeds = seed_stage(config);
    write_stage(path, seeds);
    r.produced = r.output = seeds.items.size();
    tree.push(std::move(seeds));
    stages.push_back(report_json(r));
  }

  // A recomputed stage invalidates every checkpoint after it.
  bool reuse = resumable;
  for (Stage s : kExpansionOrder) {
    const auto path = checkpoint_path(out_dir, s);
    StageReport r;
    if (reuse && std::filesystem::exists(path)) {
      const auto started = std::chrono::steady_clock::now();
      auto loaded = read_stage(path, s);
      r.stage = s;
      r.resumed = true;
      r.parents = tree.stage(previous(s)).items.size();
      r.output = loaded.items.size();
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      tree.push(std::move(loaded));
    } else {
      reuse = false;
      try {
        auto out = expand_stage(config, *backend, s, tree, r);
        write_stage(path, out);
        tree.push(std::move(out));
      } catch (const StageFailure& failure) {
        auto partial_path = out_dir / ("stage-" + std::string(stage_name(s)) + ".partial.jsonl");
        write_stage(partial_path, failure.partial());
        manifest["failed_stage"] = stage_name(s);
        manifest["error"] = failure.what();
        manifest["partial_output"] = partial_path.filename().string();
        manifest["partial_items"] = failure.partial().items.size();
        write_manifest();
        throw BackendError(std::string("stage '") + std::string(stage_name(s)) + "' failed: " + failure.what(),
                           failure.status(), failure.retryable());
      }
    }
    spdlog::info("stage {}: {} items ({} removed by dedup{})", stage_name(s), r.output, r.dedup_removed,
                 r.resumed ? ", resumed" : "");
    stages.push_back(report_json(r));
  }

  std::vector<AnnotationSet> annotations;
  {
    const auto path = checkpoint_path(out_dir, Stage::Annotation);
    StageReport r;
    r.stage = Stage::Annotation;
    bool loaded = false;
    if (reuse && std::filesystem::exists(path)) {
      const auto lines = read_lines(path);
      if (lines.size() == tree.stage(Stage::Prompt).items.size()) {
        for (const auto& l : lines) {
          AnnotationSet a;
          for (auto name : AnnotationSet::kFields) a.field(name) = l.at("annotations").at(std::string(name));
          annotations.push_back(std::move(a));
        }
        r.resumed = loaded = true;
        r.output = annotations.size();
      }
    }
    if (!loaded) {
      annotations = annotate_stage(config, *backend, tree, r);
      std::vector<json> lines;
      for (std::size_t i = 0; i < annotations.size(); ++i) {
        json a = json::object();
        for (auto name : AnnotationSet::kFields) a[std::string(name)] = annotations[i].field(name);
        lines.push_back({{"id", i}, {"annotations", a}});
      }
      write_lines(path, lines);
    }
    stages.push_back(report_json(r));
  }

  const auto& prompts = tree.stage(Stage::Prompt).items;
  std::vector<PromptRecord> records(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto& rec = records[i];
    rec.id = prompts[i].id;
    rec.prompt = prompts[i].text;
    rec.lineage = tree.lineage(Stage::Subject, static_cast<std::size_t>(prompts[i].parent));
    rec.annotations = annotations[i];
  }

  const auto split = nsfw_filter(config.nsfw, records);
  manifest["nsfw_flagged"] = split.flagged.size();

  std::size_t images = 0;
  if (auto image_backend = make_image_backend(config.images, config.image_service)) {
    KvStore store(out_dir / "images.db");
    for (auto i : split.kept) {
      records[i].image_ref = generate_and_store(*image_backend, store, records[i].prompt, prompts[i].seed);
      ++images;
    }
  }
  manifest["images"] = images;

  const auto corpus_path = out_dir / "corpus.jsonl";
  const auto summary = write_corpus(records, corpus_path);
  manifest["prompts"] = summary.count;
  manifest["corpus"] = corpus_path.filename().string();
  write_manifest();

  return {corpus_path, manifest_path, manifest, std::move(records)};
}

}  // namespace atlas
