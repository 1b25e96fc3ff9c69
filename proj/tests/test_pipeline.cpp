#include <doctest.h>

#include <atomic>
#include <fstream>
#include <map>
#include <set>

#include "atlas/error.hpp"
#include "atlas/pipeline.hpp"
#include "support.hpp"

using namespace atlas;

namespace {

GenerationConfig small_config() {
  GenerationConfig c;
  c.categories = {"landscapes"};
  c.fanout = {2, 2, 3, 2, 2};
  c.dedup.reset();
  c.images = ImageKind::None;
  return c;
}

// Wraps the mock; counts calls and can fail a chosen stage after some calls.
class ScriptedBackend final : public TextBackend {
 public:
  std::atomic<int> expand_calls{0};
  std::atomic<int> other_calls{0};
  std::optional<Stage> fail_stage;
  int fail_after = 0;
  std::atomic<int> stage_calls{0};
  std::size_t truncate_to = 0;  // 0: no truncation

  std::string id() const override { return "template-mock"; }
  std::vector<std::string> expand(const StageRequest& r) override {
    ++expand_calls;
    if (fail_stage && r.stage == *fail_stage && stage_calls++ >= fail_after)
      throw BackendError("scripted failure", 503, true);
    auto items = mock_.expand(r);
    if (truncate_to && items.size() > truncate_to) items.resize(truncate_to);
    return items;
  }
  std::string compose(const std::string& a, const std::string& b, const std::string& c, std::uint64_t s) override {
    ++other_calls;
    return mock_.compose(a, b, c, s);
  }
  AnnotationSet annotate(const std::string& p, const ExpansionLineage& l, std::uint64_t s) override {
    ++other_calls;
    return mock_.annotate(p, l, s);
  }
  std::string label(std::span<const std::string> s) override { return mock_.label(s); }

 private:
  TemplateMockBackend mock_;
};

ExpansionTree tree_through(const GenerationConfig& cfg, TextBackend& backend, Stage last) {
  ExpansionTree tree;
  tree.push(seed_stage(cfg));
  for (Stage s : {Stage::Subcategory, Stage::Subsubcategory, Stage::Idea, Stage::Location, Stage::Subject,
                  Stage::Prompt}) {
    StageReport r;
    tree.push(expand_stage(cfg, backend, s, tree, r));
    if (s == last) break;
  }
  return tree;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("stage counts follow the fanout") {
    TemplateMockBackend mock;
    const auto cfg = small_config();
    ExpansionTree tree;
    tree.push(seed_stage(cfg));
    CHECK(tree.stage(Stage::Category).items.size() == 1);
    const std::map<Stage, std::size_t> expected = {{Stage::Subcategory, 2}, {Stage::Subsubcategory, 4},
                                                   {Stage::Idea, 12},       {Stage::Location, 24},
                                                   {Stage::Subject, 48},    {Stage::Prompt, 48}};
    for (auto [stage, count] : expected) {
      StageReport r;
      tree.push(expand_stage(cfg, mock, stage, tree, r));
      CHECK(tree.stage(stage).items.size() == count);
      CHECK(r.output == count);
      CHECK(r.shortfall == 0);
    }
    for (std::size_t i = 0; i < 48; ++i) {
      const auto lin = tree.lineage(Stage::Subject, i);
      CHECK(lin.complete());
      CHECK(lin.category == "landscapes");
    }
  }

  TEST_CASE("location and subject fanout give fifty prompts per idea") {
    TemplateMockBackend mock;
    auto cfg = small_config();
    cfg.categories = {"landscapes", "animals"};
    cfg.fanout = {1, 1, 3, 10, 5};
    const auto tree = tree_through(cfg, mock, Stage::Prompt);
    std::map<std::uint64_t, std::size_t> per_idea;
    const auto& prompts = tree.stage(Stage::Prompt).items;
    const auto& subjects = tree.stage(Stage::Subject).items;
    const auto& locations = tree.stage(Stage::Location).items;
    for (const auto& p : prompts) ++per_idea[locations[subjects[p.parent].parent].parent];
    CHECK(per_idea.size() == tree.stage(Stage::Idea).items.size());
    for (auto [idea, count] : per_idea) CHECK(count == 50);
  }

  TEST_CASE("expand_stage checks stage order") {
    TemplateMockBackend mock;
    const auto cfg = small_config();
    ExpansionTree tree;
    tree.push(seed_stage(cfg));
    StageReport r;
    CHECK_THROWS_AS(expand_stage(cfg, mock, Stage::Idea, tree, r), ValidationError);
    CHECK_THROWS_AS(tree.push(StageOutput{Stage::Idea, {}}), ValidationError);
  }

  TEST_CASE("shortfall is recorded, not fatal") {
    ScriptedBackend backend;
    backend.truncate_to = 1;
    const auto cfg = small_config();
    ExpansionTree tree;
    tree.push(seed_stage(cfg));
    StageReport r;
    const auto out = expand_stage(cfg, backend, Stage::Subcategory, tree, r);
    CHECK(out.items.size() == 1);
    CHECK(r.requested == 2);
    CHECK(r.shortfall == 1);
  }

  TEST_CASE("dedup removes near-identical siblings") {
    TemplateMockBackend mock;
    auto cfg = small_config();
    cfg.fanout = {30, 1, 1, 1, 1};
    cfg.dedup = DedupParams{};
    ExpansionTree tree;
    tree.push(seed_stage(cfg));
    StageReport r;
    const auto out = expand_stage(cfg, mock, Stage::Subcategory, tree, r);
    CHECK(r.produced == 30);
    CHECK(r.dedup_removed == 30 - out.items.size());
    std::set<std::string> unique;
    for (std::size_t i = 0; i < out.items.size(); ++i) {
      CHECK(out.items[i].id == i);
      unique.insert(out.items[i].text);
    }
    CHECK(unique.size() == out.items.size());
  }

  TEST_CASE("run_pipeline writes a deterministic corpus") {
    testing::TempDir a, b;
    auto cfg = small_config();
    cfg.images = ImageKind::Procedural;
    const auto ra = run_pipeline(cfg, a.path());
    const auto rb = run_pipeline(cfg, b.path());
    CHECK(ra.records.size() == 48);
    CHECK(testing::read_file(a / "corpus.jsonl") == testing::read_file(b / "corpus.jsonl"));
    for (const auto& rec : ra.records) {
      CHECK(rec.lineage.complete());
      CHECK(rec.annotations.complete());
      CHECK(rec.image_ref.has_value());
    }
    CHECK(ra.manifest["prompts"] == 48);
    CHECK(ra.manifest["images"] == 48);
    CHECK(ra.manifest["config_fingerprint"] == cfg.fingerprint());
    CHECK(std::filesystem::exists(a / "images.db"));
    CHECK(std::filesystem::exists(a / "manifest.json"));
  }

  TEST_CASE("resume reuses matching checkpoints") {
    testing::TempDir dir;
    const auto cfg = small_config();
    ScriptedBackend first;
    run_pipeline(cfg, dir.path(), &first);
    CHECK(first.expand_calls > 0);
    const auto corpus = testing::read_file(dir / "corpus.jsonl");

    ScriptedBackend second;
    const auto res = run_pipeline(cfg, dir.path(), &second);
    CHECK(second.expand_calls == 0);
    CHECK(second.other_calls == 0);
    CHECK(testing::read_file(dir / "corpus.jsonl") == corpus);
    for (const auto& st : res.manifest["stages"]) CHECK((st["stage"] == "category" || st["resumed"] == true));

    // A different seed invalidates everything.
    auto changed = cfg;
    changed.seed = 7;
    ScriptedBackend third;
    run_pipeline(changed, dir.path(), &third);
    CHECK(third.expand_calls > 0);
  }

  TEST_CASE("backend failure leaves a partial stage and a failure manifest") {
    testing::TempDir dir;
    auto cfg = small_config();
    ScriptedBackend backend;
    backend.fail_stage = Stage::Idea;
    backend.fail_after = 2;
    CHECK_THROWS_AS(run_pipeline(cfg, dir.path(), &backend), BackendError);
    std::ifstream in(dir / "manifest.json");
    const auto manifest = nlohmann::json::parse(in);
    CHECK(manifest["failed_stage"] == "idea");
    CHECK(manifest["partial_output"] == "stage-idea.partial.jsonl");
    CHECK(std::filesystem::exists(dir / "stage-idea.partial.jsonl"));
    CHECK(manifest["partial_items"].get<std::size_t>() <= 6);
    CHECK(std::filesystem::exists(dir / "stage-subsubcategory.jsonl"));
    CHECK_FALSE(std::filesystem::exists(dir / "corpus.jsonl"));

    // Retrying resumes from the completed stages.
    ScriptedBackend retry;
    const auto res = run_pipeline(cfg, dir.path(), &retry);
    CHECK(res.records.size() == 48);
    CHECK(retry.expand_calls == 4 + 12 + 24);
  }

  TEST_CASE("config json round trip and validation") {
    auto cfg = small_config();
    cfg.passes = 2;
    const auto back = GenerationConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.fingerprint() == cfg.fingerprint());
    CHECK_FALSE(back.dedup.has_value());
    cfg.fanout.ideas = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = small_config();
    cfg.passes = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    CHECK(seed_categories().size() == 160);
  }

  TEST_CASE("child seeds differ by every input") {
    const auto s = child_seed(1, Stage::Idea, 2, 3);
    CHECK(s == child_seed(1, Stage::Idea, 2, 3));
    CHECK(s != child_seed(2, Stage::Idea, 2, 3));
    CHECK(s != child_seed(1, Stage::Location, 2, 3));
    CHECK(s != child_seed(1, Stage::Idea, 3, 3));
    CHECK(s != child_seed(1, Stage::Idea, 2, 4));
  }
}
