#include <doctest.h>

#include <set>

#include "atlas/error.hpp"
#include "atlas/http_server.hpp"
#include "atlas/png.hpp"
#include "atlas/service.hpp"
#include "fixture.hpp"
#include "support.hpp"

using namespace atlas;
using nlohmann::json;
namespace oracle = testing::oracle;

namespace {

// One artifact directory shared by every case in this file.
const std::filesystem::path& corpus_dir() {
  static testing::TempDir dir;
  static const bool built = [] {
    testing::build_artifacts(dir.path());
    return true;
  }();
  (void)built;
  return dir.path();
}

// Service mounted on a live HTTP server.
struct Api {
  std::shared_ptr<KvStore> generated;
  std::unique_ptr<MapService> service;
  testing::FakeServer http;
  std::unique_ptr<httplib::Client> client;

  explicit Api(ServiceConfig config = {}, std::unique_ptr<ImageBackend> images = std::make_unique<ProceduralImageBackend>())
  {
    static int n = 0;
    generated = std::make_shared<KvStore>(corpus_dir() / ("generated-" + std::to_string(n++) + ".db"));
    service = std::make_unique<MapService>(Snapshot::load(corpus_dir()), config, std::move(images), generated);
    mount_api(http.server, *service);
    http.start();
    client = std::make_unique<httplib::Client>("127.0.0.1", http.port());
  }

  json get(const std::string& path, int expect = 200) {
    auto res = client->Get(path);
    REQUIRE(res);
    CHECK(res->status == expect);
    return check_version(*res);
  }
  json post(const std::string& path, const json& body, int expect = 200, const std::string& session = "") {
    httplib::Headers h;
    if (!session.empty()) h.emplace(kSessionHeader, session);
    auto res = client->Post(path, h, body.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == expect);
    return check_version(*res);
  }
  static json check_version(const httplib::Response& res) {
    auto body = json::parse(res.body);
    REQUIRE(body.contains("snapshot_version"));
    CHECK(res.get_header_value(kVersionHeader) == std::to_string(body["snapshot_version"].get<std::uint64_t>()));
    return body;
  }
};

std::string viewport_url(const BBox& b, double zoom) {
  return "/api/viewport?minx=" + std::to_string(b.minx) + "&miny=" + std::to_string(b.miny) +
         "&maxx=" + std::to_string(b.maxx) + "&maxy=" + std::to_string(b.maxy) + "&zoom=" + std::to_string(zoom);
}

std::set<std::uint64_t> ids_of(const json& points) {
  std::set<std::uint64_t> out;
  for (const auto& p : points) out.insert(p["id"].get<std::uint64_t>());
  return out;
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("snapshot excludes nsfw records") {
    const auto snap = Snapshot::load(corpus_dir());
    const auto all = read_corpus(corpus_dir() / "corpus.jsonl");
    std::size_t flagged = 0;
    for (const auto& r : all) {
      flagged += r.nsfw_flagged;
      CHECK(snap->row_of(r.id).has_value() == !r.nsfw_flagged);
    }
    CHECK(all.size() == 1000);
    CHECK(flagged > 0);
    CHECK(snap->records().size() == 1000 - flagged);
    CHECK(snap->map().grid.total() == snap->records().size());
    CHECK(snap->field("prompt")->index.has_value());
  }

  TEST_CASE("viewport at zoom 0 shows density only") {
    Api api;
    const auto& b = api.service->snapshot()->map().grid.bounds;
    const auto body = api.get(viewport_url({b.minx, b.miny, b.maxx, b.maxy}, 0));
    CHECK(body["points"].empty());
    CHECK(body["visible_count"] == 0);
    CHECK(body["density"]["opacity"] == 1.0);
    CHECK(body["density"]["tile_zoom"] == 0);
    REQUIRE(body["density"]["tiles"].size() == 1);
    CHECK(body["density"]["tiles"][0]["url"] == "/api/tile/0/0/0.png");
    CHECK(body["labels"].size() >= 1);
  }

  TEST_CASE("viewport bbox filter equals a linear scan") {
    Api api;
    const auto snap = api.service->snapshot();
    const auto& b = snap->map().grid.bounds;
    const double w = b.maxx - b.minx, h = b.maxy - b.miny;
    const std::vector<BBox> boxes = {{b.minx, b.miny, b.maxx, b.maxy},
                                     {b.minx + 0.2 * w, b.miny + 0.1 * h, b.minx + 0.7 * w, b.miny + 0.5 * h},
                                     {b.minx - w, b.miny - h, b.minx - 0.5 * w, b.miny - 0.5 * h}};
    for (const auto& box : boxes)
      for (double zoom : {4.0, 6.0, 7.5, 8.0}) {
        const auto body = api.service->viewport(*snap, box, zoom);
        std::set<std::uint64_t> expect;
        for (std::size_t r = 0; r < snap->records().size(); ++r) {
          const auto& p = snap->map().positions[r];
          if (snap->map().lod.min_zoom[r] <= zoom && p.x >= box.minx && p.x <= box.maxx && p.y >= box.miny &&
              p.y <= box.maxy)
            expect.insert(snap->records()[r].id);
        }
        CHECK(ids_of(body["points"]) == expect);
        CHECK(body["visible_count"] == expect.size());
        CHECK_FALSE(body["truncated"].get<bool>());
      }
  }

  TEST_CASE("points visible at a zoom stay visible when zooming in") {
    Api api;
    // Padded so decimal formatting of the bounds cannot clip an edge point.
    const auto& b = api.service->snapshot()->map().grid.bounds;
    const BBox all{b.minx - 1, b.miny - 1, b.maxx + 1, b.maxy + 1};
    std::set<std::uint64_t> prev;
    for (double zoom = 0; zoom <= 8.0; zoom += 0.5) {
      const auto cur = ids_of(api.get(viewport_url(all, zoom))["points"]);
      CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
    CHECK(prev.size() == api.service->snapshot()->records().size());
  }

  TEST_CASE("viewport cap truncates to a prefix of the zoom order") {
    ServiceConfig cfg;
    cfg.viewport_cap = 50;
    Api api(cfg);
    const auto snap = api.service->snapshot();
    const auto& b = snap->map().grid.bounds;
    const BBox all{b.minx, b.miny, b.maxx, b.maxy};
    std::set<std::uint64_t> prev;
    for (double zoom : {6.0, 7.0, 8.0}) {
      const auto body = api.service->viewport(*snap, all, zoom);
      CHECK(body["points"].size() == 50);
      CHECK(body["truncated"].get<bool>());
      CHECK(body["visible_count"].get<std::size_t>() > 50);
      const auto cur = ids_of(body["points"]);
      CHECK(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
  }

  TEST_CASE("density fades out and tiles follow zoom") {
    Api api;
    const auto& b = api.service->snapshot()->map().grid.bounds;
    const BBox all{b.minx, b.miny, b.maxx, b.maxy};
    const auto mid = api.get(viewport_url(all, 5.75));
    CHECK(mid["density"]["opacity"].get<double>() == doctest::Approx(0.5));
    CHECK(mid["density"]["tile_zoom"] == 3);
    CHECK(mid["density"]["tiles"].size() == 64);
    CHECK(api.get(viewport_url(all, 7))["density"]["tiles"].empty());
    CHECK(api.get(viewport_url(all, 2.5))["density"]["tiles"].size() == 16);
  }

  TEST_CASE("viewport and labels reject bad parameters") {
    Api api;
    api.get("/api/viewport?minx=0&miny=0&maxx=1&maxy=1&zoom=9", 400);
    api.get("/api/viewport?minx=0&miny=0&maxx=1&maxy=1&zoom=-1", 400);
    api.get("/api/viewport?minx=2&miny=0&maxx=1&maxy=1&zoom=5", 400);
    api.get("/api/viewport?minx=0&miny=0&maxx=1&zoom=5", 400);
    api.get("/api/viewport?minx=abc&miny=0&maxx=1&maxy=1&zoom=5", 400);
    api.get("/api/labels?zoom=nan", 400);
    const auto labels = api.get("/api/labels?zoom=8");
    CHECK(labels["labels"].size() == api.service->snapshot()->map().anchors.size());
    for (const auto& l : labels["labels"]) {
      CHECK(l["text"].is_string());
      CHECK(l["rank"].is_number_integer());
    }
  }

  TEST_CASE("search finds a record by its own prompt") {
    Api api;
    const auto snap = api.service->snapshot();
    for (std::size_t r = 0; r < snap->records().size(); r += 97) {
      const auto& rec = snap->records()[r];
      const auto body = api.post("/api/search", {{"query", rec.prompt}, {"k", 5}, {"exact", true}});
      REQUIRE(body["hits"].size() >= 1);
      // Identical text embeds identically; exact ties may reorder equal rows.
      CHECK(body["hits"][0]["score"].get<double>() == doctest::Approx(0.0).epsilon(1e-5));
      for (const auto& h : body["hits"]) {
        CHECK(h["highlight"] == true);
        CHECK(snap->row_of(h["id"].get<std::uint64_t>()).has_value());
      }
    }
  }

  TEST_CASE("exact search matches a brute force oracle") {
    Api api;
    const auto snap = api.service->snapshot();
    const auto& m = snap->field("subject")->matrix;
    const std::vector<float> base(m.data().begin(), m.data().end());
    const std::vector<std::string> queries = {"fox", "old fisherman mending nets", "street musician", "cyclist racing",
                                              "a red dragon", "lighthouse keeper", "market crowd", "chef",
                                              "sailor", "young wizard", "barn owl", "potter", "skateboarder",
                                              "violinist", "farmer", "painter", "surfer", "monk", "cat", "robot"};
    for (const auto& q : queries) {
      const auto body = api.post("/api/search", {{"query", q}, {"field", "subject"}, {"k", 10}, {"exact", true}});
      const auto qv = embed_one(snap->embedder(), q);
      const auto truth = oracle::knn(base, m.dim(), qv.data(), 10);
      REQUIRE(body["hits"].size() == 10);
      // Compare distance profiles: the id sets can only differ within exact ties.
      for (std::size_t i = 0; i < 10; ++i) {
        const double d = oracle::sqdist(qv.data(), &base[truth[i] * m.dim()], m.dim());
        CHECK(body["hits"][i]["score"].get<double>() == doctest::Approx(d).epsilon(1e-4));
      }
    }
  }

  TEST_CASE("approximate search and defaults") {
    Api api;
    const auto body = api.post("/api/search", {{"query", "street musician playing"}});
    CHECK(body["k"] == kDefaultSearchK);
    CHECK(body["field"] == "prompt");
    CHECK(body["exact"] == false);
    CHECK(body["hits"].size() <= kDefaultSearchK);
    CHECK(body["hits"].size() > 0);
  }

  TEST_CASE("search validation") {
    Api api;
    CHECK(api.post("/api/search", {{"query", "x"}, {"field", "colour"}}, 400)["error"].get<std::string>().find("prompt") !=
          std::string::npos);
    api.post("/api/search", {{"query", "x"}, {"k", 1001}}, 400);
    api.post("/api/search", {{"query", "x"}, {"k", 0}}, 400);
    api.post("/api/search", {{"query", "x"}, {"k", "5"}}, 400);
    api.post("/api/search", {{"query", ""}}, 400);
    api.post("/api/search", {{"k", 3}}, 400);
    api.post("/api/search", {{"query", "x"}, {"exact", "yes"}}, 400);
    auto res = api.client->Post("/api/search", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(api.post("/api/search", {{"query", "x"}, {"k", 1000}})["hits"].size() <= 1000);
  }

  TEST_CASE("point details, 404 for unknown and flagged ids") {
    Api api;
    const auto snap = api.service->snapshot();
    const auto& rec = snap->records()[3];
    const auto body = api.get("/api/point/" + std::to_string(rec.id));
    CHECK(body["prompt"] == rec.prompt);
    CHECK(body["annotations"]["subject"] == rec.annotations.subject);
    CHECK(body["lineage"]["category"] == "city life");
    CHECK(body["position"].size() == 2);
    REQUIRE(body["image_url"].is_string());
    auto img = api.client->Get(body["image_url"].get<std::string>());
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(decode_png(std::vector<std::uint8_t>(img->body.begin(), img->body.end())).width == ProceduralImageBackend::kSize);

    api.get("/api/point/99999999", 404);
    api.get("/api/point/abc", 400);
    for (const auto& r : read_corpus(corpus_dir() / "corpus.jsonl"))
      if (r.nsfw_flagged) {
        api.get("/api/point/" + std::to_string(r.id), 404);
        break;
      }
    api.get("/api/image/0000", 404);
  }

  TEST_CASE("tiles decode and out of range tiles are 404") {
    Api api;
    auto res = api.client->Get("/api/tile/2/1/3.png");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    const auto png = decode_png(std::vector<std::uint8_t>(res->body.begin(), res->body.end()));
    CHECK(png.pixels == api.service->snapshot()->tiles().pixels(2, 1, 3));
    api.get("/api/tile/2/4/0.png", 404);
    api.get("/api/tile/9/0/0.png", 404);
  }

  TEST_CASE("generate is deterministic and recorded per session") {
    ServiceConfig cfg;
    cfg.history_cap = 3;
    Api api(cfg);
    const auto a = api.post("/api/generate", {{"prompt", "a paper kite over the harbor"}, {"seed", 7}}, 200, "s1");
    const auto b = api.post("/api/generate", {{"prompt", "a paper kite over the harbor"}, {"seed", 7}}, 200, "s2");
    CHECK(a["image_key"] == b["image_key"]);
    const auto c = api.post("/api/generate", {{"prompt", "a paper kite over the harbor"}, {"seed", 8}}, 200, "s1");
    CHECK(c["image_key"] != a["image_key"]);
    auto img = api.client->Get(a["image_url"].get<std::string>());
    REQUIRE(img);
    CHECK(img->status == 200);

    for (int i = 0; i < 3; ++i) api.post("/api/generate", {{"prompt", "p" + std::to_string(i)}}, 200, "s1");
    httplib::Headers h = {{kSessionHeader, "s1"}};
    auto hist = json::parse(api.client->Get("/api/history", h)->body);
    REQUIRE(hist["entries"].size() == 3);
    CHECK(hist["entries"][0]["prompt"] == "p0");
    CHECK(hist["entries"][2]["prompt"] == "p2");
    const auto id = hist["entries"][1]["id"].get<std::uint64_t>();
    auto del = api.client->Delete("/api/history/" + std::to_string(id), h);
    REQUIRE(del);
    CHECK(del->status == 200);
    CHECK(api.client->Delete("/api/history/" + std::to_string(id), h)->status == 404);
    hist = json::parse(api.client->Get("/api/history", h)->body);
    CHECK(hist["entries"].size() == 2);
    // The other session is untouched; no header means the default session.
    h = {{kSessionHeader, "s2"}};
    CHECK(json::parse(api.client->Get("/api/history", h)->body)["entries"].size() == 1);
    CHECK(api.get("/api/history")["entries"].empty());

    api.post("/api/generate", {{"prompt", "   "}}, 400);
    api.post("/api/generate", {{"prompt", "x"}, {"seed", -1}}, 400);
    api.post("/api/generate", {{"prompt", "x"}, {"seed", 1.5}}, 400);
    api.post("/api/generate", {{"seed", 1}}, 400);
  }

  TEST_CASE("remote image timeout maps to 504") {
    testing::FakeServer slow;
    slow.server.Post("/img", [](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(500));
      res.set_content("x", "image/png");
    });
    slow.server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    slow.start();
    RemoteEndpoint ep;
    ep.url = slow.url("/img");
    ep.timeout = std::chrono::milliseconds(100);
    ep.retries = 0;
    Api api({}, std::make_unique<RemoteImageBackend>(ep));
    const auto body = api.post("/api/generate", {{"prompt", "slow"}}, 504);
    CHECK(body["status"] == 0);
    CHECK(body["retryable"] == true);

    ep.url = slow.url("/broken");
    Api broken({}, std::make_unique<RemoteImageBackend>(ep));
    CHECK(broken.post("/api/generate", {{"prompt", "x"}}, 502)["status"] == 500);
  }

  TEST_CASE("snapshot swap bumps the version for later responses") {
    Api api;
    const auto before = api.get("/api/labels?zoom=1")["snapshot_version"].get<std::uint64_t>();
    const auto held = api.service->snapshot();
    const auto next = api.service->swap_snapshot(Snapshot::load(corpus_dir()));
    CHECK(next > before);
    CHECK(api.get("/api/labels?zoom=1")["snapshot_version"] == next);
    // A response built on the old snapshot carries only the old version.
    const auto old = api.service->labels(*held, 1);
    CHECK(old["snapshot_version"] == held->version());
  }

  TEST_CASE("concurrent requests during swaps see one version each") {
    Api api;
    std::atomic<bool> stop{false};
    std::thread swapper([&] {
      while (!stop) api.service->swap_snapshot(Snapshot::load(corpus_dir()));
    });
    for (int i = 0; i < 20; ++i) {
      auto res = api.client->Get("/api/viewport?minx=-1000&miny=-1000&maxx=1000&maxy=1000&zoom=7");
      REQUIRE(res);
      Api::check_version(*res);
    }
    stop = true;
    swapper.join();
  }
}
