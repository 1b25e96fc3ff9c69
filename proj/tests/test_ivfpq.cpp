#include <doctest.h>

#include <set>

#include "atlas/bench.hpp"
#include "atlas/error.hpp"
#include "atlas/ivfpq.hpp"
#include "atlas/kmeans.hpp"
#include "atlas/rng.hpp"
#include "support.hpp"

using namespace atlas;
namespace oracle = testing::oracle;

namespace {

EmbeddingMatrix matrix_of(const std::vector<std::vector<float>>& rows) {
  return EmbeddingMatrix(static_cast<std::uint32_t>(rows[0].size()), oracle::flatten(rows));
}

IvfPqIndex build(const EmbeddingMatrix& m, IvfPqParams p) {
  auto index = IvfPqIndex::train(p, m);
  std::vector<std::uint64_t> ids(m.count());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = 1000 + i;
  index.add(ids, m);
  return index;
}

}  // namespace

TEST_SUITE("ivfpq") {
  TEST_CASE("kmeans separates well spaced blobs and is deterministic") {
    std::vector<float> pts;
    Rng rng(3);
    const float centers[3][2] = {{0, 0}, {50, 0}, {0, 50}};
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 40; ++i) {
        pts.push_back(centers[c][0] + static_cast<float>(rng.normal()));
        pts.push_back(centers[c][1] + static_cast<float>(rng.normal()));
      }
    const auto a = kmeans(pts, 2, {3, 25, 7});
    const auto b = kmeans(pts, 2, {3, 25, 7});
    CHECK(a.centroids == b.centroids);
    CHECK(a.assignment == b.assignment);
    for (int c = 0; c < 3; ++c) {
      std::set<std::uint32_t> labels(a.assignment.begin() + c * 40, a.assignment.begin() + (c + 1) * 40);
      CHECK(labels.size() == 1);
    }
    // Inertia oracle.
    double inertia = 0;
    for (std::size_t i = 0; i < 120; ++i)
      inertia += oracle::sqdist(&pts[2 * i], &a.centroids[2 * a.assignment[i]], 2);
    CHECK(a.inertia == doctest::Approx(inertia).epsilon(1e-6));
  }

  TEST_CASE("kmeans identical points and bad input") {
    std::vector<float> same(20, 0.25f);
    const auto r = kmeans(same, 2, {1, 5, 0});
    CHECK(r.centroids == std::vector<float>{0.25f, 0.25f});
    CHECK_THROWS_AS(kmeans(same, 2, {11, 5, 0}), ValidationError);
    CHECK_THROWS_AS(kmeans(same, 3, {1, 5, 0}), ValidationError);
  }

  TEST_CASE("default subquantizers") {
    CHECK(default_subquantizers(128) == 16);
    CHECK(default_subquantizers(32) == 8);
    CHECK(default_subquantizers(8) == 2);
    CHECK(default_subquantizers(7) == 1);
  }

  TEST_CASE("parameter and shape validation") {
    const auto m = matrix_of(oracle::random_rows(300, 16, 1, true));
    IvfPqParams p;
    p.nlist = 4;
    p.m = 3;
    p.nprobe = 1;
    CHECK_THROWS_AS(IvfPqIndex::train(p, m), ValidationError);
    p.m = 4;
    p.nprobe = 5;
    CHECK_THROWS_AS(IvfPqIndex::train(p, m), ValidationError);
    p.nprobe = 2;
    const auto few = matrix_of(oracle::random_rows(100, 16, 1, true));
    CHECK_THROWS_AS(IvfPqIndex::train(p, few), ValidationError);
    auto index = build(m, p);
    std::vector<std::uint64_t> dup = {1000};
    CHECK_THROWS_AS(index.add(dup, matrix_of(oracle::random_rows(1, 16, 2, true))), ValidationError);
    std::vector<float> bad(8, 0.0f);
    CHECK_THROWS_AS(index.search(bad, 5), ValidationError);
    CHECK_THROWS_AS(index.search(m.row(0), 0), ValidationError);
    CHECK_THROWS_AS(index.search(m.row(0), 5, 9), ValidationError);
  }

  TEST_CASE("full probe with full rerank equals brute force") {
    const auto rows = oracle::random_rows(600, 32, 11, true);
    const auto m = matrix_of(rows);
    IvfPqParams p;
    p.nlist = 8;
    p.m = 8;
    p.nprobe = 8;
    const auto index = build(m, p);
    CHECK(index.size() == 600);
    const auto lookup = [&](std::uint64_t id) { return m.row(id - 1000); };
    const auto queries = oracle::random_rows(20, 32, 12, true);
    const auto base = oracle::flatten(rows);
    for (const auto& q : queries) {
      const auto hits = index.search_exact_rerank(q, 10, index.size(), lookup);
      const auto truth = oracle::knn(base, 32, q.data(), 10);
      REQUIRE(hits.size() == 10);
      for (std::size_t i = 0; i < 10; ++i) CHECK(hits[i].id == truth[i] + 1000);
    }
  }

  TEST_CASE("adc results are sorted and ids distinct") {
    const auto m = matrix_of(oracle::random_rows(500, 16, 5, true));
    IvfPqParams p;
    p.nlist = 4;
    p.m = 4;
    p.nprobe = 2;
    const auto index = build(m, p);
    const auto hits = index.search(m.row(3), 50);
    REQUIRE(hits.size() == 50);
    std::set<std::uint64_t> ids;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      ids.insert(hits[i].id);
      if (i) CHECK((hits[i - 1].score < hits[i].score || (hits[i - 1].score == hits[i].score && hits[i - 1].id < hits[i].id)));
    }
    CHECK(ids.size() == 50);
    // Self retrieval with full probing.
    CHECK(index.search(m.row(3), 1, 4)[0].id == 1003);
  }

  TEST_CASE("save and load reproduce search results") {
    testing::TempDir dir;
    const auto m = matrix_of(oracle::random_rows(400, 16, 8, true));
    IvfPqParams p;
    p.nlist = 4;
    p.m = 4;
    p.nprobe = 2;
    const auto index = build(m, p);
    index.save(dir / "i.pidx");
    const auto back = IvfPqIndex::load(dir / "i.pidx");
    CHECK(back.size() == index.size());
    for (std::size_t q = 0; q < 5; ++q) CHECK(back.search(m.row(q), 20) == index.search(m.row(q), 20));
    const auto size = std::filesystem::file_size(dir / "i.pidx");
    std::filesystem::resize_file(dir / "i.pidx", size - 3);
    CHECK_THROWS(IvfPqIndex::load(dir / "i.pidx"));
    CHECK_THROWS_AS(IvfPqIndex::load(dir / "nope.pidx"), IoError);
  }

  TEST_CASE("recall bench with exhaustive rerank reaches 1") {
    const auto base = random_unit_vectors(2000, 32, 1);
    const auto queries = random_unit_vectors(20, 32, 2);
    IvfPqParams p;
    p.nlist = 8;
    p.m = 8;
    const std::vector<std::uint32_t> nprobes = {1, 8};
    const auto report = recall_bench(base, queries, p, nprobes, 10, 2000);
    REQUIRE(report.curve.size() == 2);
    CHECK(report.curve[1].recall == doctest::Approx(1.0));
    CHECK(report.curve[0].recall <= report.curve[1].recall);
    // brute_force_knn agrees with the double oracle.
    const auto truth = oracle::knn(std::vector<float>(base.data().begin(), base.data().end()), 32,
                                   queries.row(0).data(), 10);
    CHECK(brute_force_knn(base, queries.row(0), 10) == truth);
  }
}
