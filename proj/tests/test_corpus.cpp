#include <doctest.h>

#include <fstream>
#include <thread>

#include "atlas/corpus.hpp"
#include "atlas/error.hpp"
#include "atlas/kv_store.hpp"
#include "support.hpp"

using namespace atlas;

namespace {

PromptRecord sample(std::uint64_t id) {
  PromptRecord r;
  r.id = id;
  r.prompt = "a lighthouse at dusk, oil painting #" + std::to_string(id);
  r.lineage = {"landscapes", "coast", "rocky coast", "lonely lighthouse", "cliff edge", "lighthouse"};
  r.annotations = {"cliff edge", "lighthouse", "golden hour", "warm", "calm", "painting"};
  return r;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("corpus round trip keeps every field") {
    testing::TempDir dir;
    std::vector<PromptRecord> recs = {sample(1), sample(2), sample(7)};
    recs[1].embedding_row = 4;
    recs[1].position = Point2{1.5, -2.25};
    recs[1].image_ref = "abc";
    recs[2].nsfw_flagged = true;
    recs[2].prompt = "unicode \xc3\xa9t\xc3\xa9 \"quoted\"\nnewline";
    const auto summary = write_corpus(recs, dir / "c.jsonl");
    CHECK(summary.count == 3);
    CHECK(summary.bytes == std::filesystem::file_size(dir / "c.jsonl"));
    CHECK(read_corpus(dir / "c.jsonl") == recs);
  }

  TEST_CASE("corpus write rejects duplicates and empty prompts") {
    testing::TempDir dir;
    std::vector<PromptRecord> dup = {sample(1), sample(1)};
    CHECK_THROWS_AS(write_corpus(dup, dir / "c.jsonl"), ValidationError);
    std::vector<PromptRecord> empty = {sample(1)};
    empty[0].prompt.clear();
    CHECK_THROWS_AS(write_corpus(empty, dir / "c.jsonl"), ValidationError);
    CHECK_FALSE(std::filesystem::exists(dir / "c.jsonl"));
  }

  TEST_CASE("malformed corpus line is reported by number") {
    testing::TempDir dir;
    std::vector<PromptRecord> recs = {sample(1)};
    write_corpus(recs, dir / "c.jsonl");
    {
      std::ofstream out(dir / "c.jsonl", std::ios::app);
      out << "{not json\n";
    }
    try {
      read_corpus(dir / "c.jsonl");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
    CHECK_THROWS_AS(read_corpus(dir / "missing.jsonl"), IoError);
  }

  TEST_CASE("unknown keys are ignored") {
    testing::TempDir dir;
    std::vector<PromptRecord> recs = {sample(3)};
    write_corpus(recs, dir / "c.jsonl");
    auto text = testing::read_file(dir / "c.jsonl");
    text.insert(1, "\"extra_key\":[1,2,3],");
    std::ofstream(dir / "d.jsonl") << text;
    CHECK(read_corpus(dir / "d.jsonl") == recs);
  }

  TEST_CASE("field access by name") {
    auto r = sample(1);
    CHECK(r.annotations.field("mood") == "calm");
    CHECK(r.lineage.field("subject_caption") == "lighthouse");
    CHECK_THROWS_AS(r.annotations.field("colour"), ValidationError);
    CHECK(r.annotations.complete());
    r.annotations.genre.clear();
    CHECK_FALSE(r.annotations.complete());
  }

  TEST_CASE("embedding matrix validation and binary round trip") {
    CHECK_THROWS_AS(EmbeddingMatrix(4, {1, 0, 0}), ValidationError);
    CHECK_THROWS_AS(EmbeddingMatrix(2, {2, 0}), ValidationError);
    CHECK_THROWS_AS(EmbeddingMatrix::from_unnormalized(2, {0, 0}), ValidationError);
    auto m = EmbeddingMatrix::from_unnormalized(3, {3, 4, 0, 0, 0, 2});
    CHECK(m.count() == 2);
    CHECK(m.row(0)[0] == doctest::Approx(0.6));
    CHECK(m.row(1)[2] == doctest::Approx(1.0));

    testing::TempDir dir;
    const auto bytes = write_embeddings(m, dir / "e.bin");
    CHECK(bytes == kEmbeddingHeaderBytes + 6 * sizeof(float));
    CHECK(read_embeddings(dir / "e.bin") == m);

    // Truncated payload.
    std::filesystem::resize_file(dir / "e.bin", bytes - 1);
    CHECK_THROWS_AS(read_embeddings(dir / "e.bin"), FormatError);
    std::ofstream(dir / "bad.bin") << "XXXXXXXXXXXXXXXXXXXX";
    CHECK_THROWS_AS(read_embeddings(dir / "bad.bin"), FormatError);
  }

  TEST_CASE("float rows round trip without normalization") {
    testing::TempDir dir;
    std::vector<float> pos = {1.5f, -2.0f, 100.0f, 0.0f};
    write_float_rows(2, pos, dir / "p.bin");
    std::uint32_t dim = 0;
    CHECK(read_float_rows(dir / "p.bin", dim) == pos);
    CHECK(dim == 2);
  }
}

TEST_SUITE("corpus") {
  TEST_CASE("kv store put get and persistence") {
    testing::TempDir dir;
    const std::vector<std::uint8_t> payload = {1, 2, 3, 0, 255};
    {
      KvStore kv(dir / "kv.db");
      kv.put("a", payload, "image/png");
      kv.put("empty", std::span<const std::uint8_t>{});
      CHECK(kv.size() == 2);
      CHECK(kv.contains("a"));
      CHECK_FALSE(kv.get("zzz").has_value());
      CHECK_THROWS_AS(kv.at("zzz"), NotFound);
      const auto e = kv.get("empty");
      REQUIRE(e.has_value());
      CHECK(e->bytes.empty());
      // Last writer wins.
      kv.put("a", std::vector<std::uint8_t>{9}, "text/plain");
    }
    KvStore again(dir / "kv.db");
    const auto v = again.at("a");
    CHECK(v.bytes == std::vector<std::uint8_t>{9});
    CHECK(v.mime == "text/plain");
  }

  TEST_CASE("kv store concurrent readers and writer") {
    testing::TempDir dir;
    KvStore kv(dir / "kv.db");
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
      threads.emplace_back([&, t] {
        for (int i = 0; i < 50; ++i) {
          const std::string key = std::to_string(t) + ":" + std::to_string(i);
          kv.put(key, std::vector<std::uint8_t>{static_cast<std::uint8_t>(i)});
          CHECK(kv.at(key).bytes[0] == i);
        }
      });
    for (auto& t : threads) t.join();
    CHECK(kv.size() == 200);
  }

  TEST_CASE("content key is length prefixed sha256") {
    const auto k = content_key({"ab", "c"});
    CHECK(k.size() == 64);
    CHECK(k != content_key({"a", "bc"}));
    CHECK(k == content_key({"ab", "c"}));
  }
}
