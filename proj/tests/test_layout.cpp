#include <doctest.h>

#include <cmath>
#include <map>

#include "atlas/error.hpp"
#include "atlas/layout.hpp"
#include "atlas/rng.hpp"
#include "support.hpp"

using namespace atlas;
namespace oracle = testing::oracle;

namespace {

// Three Gaussian blobs in `dim` dimensions, centres 10 sigma apart.
std::vector<std::vector<float>> blobs(std::size_t per, std::size_t dim, std::uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  std::vector<std::vector<float>> rows;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < per; ++i) {
      std::vector<float> r(dim);
      for (std::size_t j = 0; j < dim; ++j) r[j] = static_cast<float>(rng.normal() + (j == std::size_t(c) ? 10.0 : 0.0));
      rows.push_back(r);
      labels.push_back(c);
    }
  return rows;
}

}  // namespace

TEST_SUITE("layout") {
  TEST_CASE("curve fit matches reference values") {
    const auto c = fit_curve(1.0, 0.1);
    CHECK(c.a == doctest::Approx(1.577).epsilon(0.002));
    CHECK(c.b == doctest::Approx(0.895).epsilon(0.002));
    const auto d = fit_curve(1.0, 0.5);
    CHECK(d.a < c.a);
  }

  TEST_CASE("exact knn graph matches the oracle") {
    const auto rows = oracle::random_rows(200, 8, 3, false);
    const auto flat = oracle::flatten(rows);
    const auto g = knn_graph(MatrixView(8, flat), 5, 10000, 1);
    CHECK(g.k == 5);
    for (std::size_t i = 0; i < 200; ++i) {
      auto truth = oracle::knn(flat, 8, &flat[i * 8], 6);
      truth.erase(truth.begin());  // self
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(g.indices[i * 5 + j] == truth[j]);
        CHECK(g.distances[i * 5 + j] == doctest::Approx(std::sqrt(oracle::sqdist(&flat[i * 8], &flat[truth[j] * 8], 8))));
      }
    }
  }

  TEST_CASE("index backed knn graph is close to exact") {
    const auto rows = oracle::random_rows(1500, 16, 4, false);
    const auto flat = oracle::flatten(rows);
    const auto exact = knn_graph(MatrixView(16, flat), 10, 100000, 1);
    const auto approx = knn_graph(MatrixView(16, flat), 10, 100, 1);
    std::size_t agree = 0;
    for (std::size_t i = 0; i < 1500; ++i)
      for (std::size_t j = 0; j < 10; ++j)
        for (std::size_t l = 0; l < 10; ++l) agree += exact.indices[i * 10 + j] == approx.indices[i * 10 + l];
    CHECK(double(agree) / (1500.0 * 10) > 0.9);
    for (std::size_t i = 0; i < 1500; ++i)
      for (std::size_t j = 0; j < 10; ++j) CHECK(approx.indices[i * 10 + j] != i);
  }

  TEST_CASE("fuzzy graph is symmetric with bounded weights") {
    const auto rows = oracle::random_rows(120, 6, 5, false);
    const auto flat = oracle::flatten(rows);
    const auto g = fuzzy_graph(knn_graph(MatrixView(6, flat), 8, 10000, 1));
    std::map<std::pair<std::uint32_t, std::uint32_t>, float> w;
    for (std::size_t e = 0; e < g.head.size(); ++e) {
      CHECK(g.weight[e] > 0.0f);
      CHECK(g.weight[e] <= 1.0f);
      CHECK(g.head[e] != g.tail[e]);
      w[{g.head[e], g.tail[e]}] = g.weight[e];
      if (e) CHECK(std::make_pair(g.head[e - 1], g.tail[e - 1]) < std::make_pair(g.head[e], g.tail[e]));
    }
    for (auto [k, v] : w) CHECK(w.at({k.second, k.first}) == v);
    // Every point's nearest neighbour edge has weight 1 (distance rho).
    const auto knn = knn_graph(MatrixView(6, flat), 8, 10000, 1);
    for (std::uint32_t i = 0; i < 120; ++i) CHECK(w.at({i, knn.indices[i * 8]}) == doctest::Approx(1.0f));
  }

  TEST_CASE("layout separates clusters and is bit reproducible") {
    std::vector<int> labels;
    const auto rows = blobs(60, 16, 9, labels);
    const auto flat = oracle::flatten(rows);
    LayoutParams p;
    p.epochs = 150;
    const auto a = layout(MatrixView(16, flat), p);
    const auto b = layout(MatrixView(16, flat), p);
    REQUIRE(a.size() == 180);
    CHECK(a == b);
    std::vector<double> xs, ys;
    for (const auto& pt : a) {
      CHECK(std::isfinite(pt.x));
      xs.push_back(pt.x);
      ys.push_back(pt.y);
    }
    CHECK(oracle::silhouette(xs, ys, labels) > 0.5);
    p.seed = 1234;
    CHECK_FALSE(layout(MatrixView(16, flat), p) == a);
  }

  TEST_CASE("degenerate inputs") {
    LayoutParams p;
    CHECK(layout(MatrixView(4, std::span<const float>{}), p).empty());
    std::vector<float> one = {1, 2, 3, 4};
    CHECK(layout(MatrixView(4, one), p) == std::vector<Point2>{Point2{0, 0}});
    std::vector<float> few(4 * 10, 1.0f);
    CHECK_THROWS_AS(layout(MatrixView(4, few), p), ValidationError);
    auto rows = oracle::flatten(oracle::random_rows(40, 4, 1, false));
    rows[5] = NAN;
    CHECK_THROWS_AS(layout(MatrixView(4, rows), p), ValidationError);
    p.n_neighbors = 1;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    CHECK_THROWS_AS(MatrixView(3, std::span<const float>(one)), ValidationError);
  }

  TEST_CASE("duplicate points do not break the layout") {
    std::vector<float> flat;
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 4; ++j) flat.push_back(i < 25 ? 0.0f : 1.0f);
    LayoutParams p;
    p.epochs = 50;
    for (const auto& pt : layout(MatrixView(4, flat), p)) CHECK((std::isfinite(pt.x) && std::isfinite(pt.y)));
  }
}
