#include "atlas/config.hpp"

#include <cstdlib>
#include <fstream>

#include "atlas/error.hpp"

namespace atlas {

using nlohmann::json;

namespace {

void read_remote(const json& j, RemoteEndpoint& e) {
  if (!j.is_object()) return;
  e.url = j.value("url", e.url);
  e.token = j.value("token", e.token);
  if (j.contains("timeout_ms")) e.timeout = std::chrono::milliseconds(j["timeout_ms"].get<long long>());
  e.retries = j.value("retries", e.retries);
}

json remote_json(const RemoteEndpoint& e) {
  return {{"url", e.url},
          {"token", e.token.empty() ? "" : "<redacted>"},
          {"timeout_ms", e.timeout.count()},
          {"retries", e.retries}};
}

void env_override(const char* url_var, const char* token_var, RemoteEndpoint& e) {
  if (const char* v = std::getenv(url_var); v && *v) e.url = v;
  if (const char* v = std::getenv(token_var); v && *v) e.token = v;
}

ImageKind image_kind(const std::string& s) {
  if (s == "none") return ImageKind::None;
  if (s == "procedural") return ImageKind::Procedural;
  if (s == "remote") return ImageKind::Remote;
  throw ValidationError("unknown image backend '" + s + "'");
}

const char* image_kind_name(ImageKind k) {
  switch (k) {
    case ImageKind::None: return "none";
    case ImageKind::Procedural: return "procedural";
    case ImageKind::Remote: return "remote";
  }
  return "none";
}

}  // namespace

AtlasConfig AtlasConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  AtlasConfig c;
  c.threads = j.value("threads", c.threads);
  if (auto e = j.find("embedder"); e != j.end()) {
    c.embedder = embedder_from_json(*e);
    if (e->contains("remote")) read_remote((*e)["remote"], c.embedder.remote);
    c.embedder.batch_size = e->value("batch_size", c.embedder.batch_size);
    c.embedder.max_in_flight = e->value("max_in_flight", c.embedder.max_in_flight);
  }
  if (auto g = j.find("generation"); g != j.end()) {
    c.generation = GenerationConfig::from_json(*g);
    if (g->contains("llm")) read_remote((*g)["llm"], c.generation.llm);
    if (g->contains("image_service")) read_remote((*g)["image_service"], c.generation.image_service);
    if (auto n = g->find("nsfw"); n != g->end() && n->contains("remote")) read_remote((*n)["remote"], c.generation.nsfw.remote);
  }
  if (auto i = j.find("index"); i != j.end()) {
    c.index.nlist = i->value("nlist", c.index.nlist);
    c.index.m = i->value("m", c.index.m);
    c.index.nprobe = i->value("nprobe", c.index.nprobe);
    c.index.train_iters = i->value("train_iters", c.index.train_iters);
    c.index.seed = i->value("seed", c.index.seed);
    if (i->value("bits_per_code", 8u) != 8u) throw ValidationError("bits_per_code is fixed at 8");
  }
  if (auto l = j.find("layout"); l != j.end()) {
    auto& lp = c.map.layout;
    lp.n_neighbors = l->value("n_neighbors", lp.n_neighbors);
    lp.min_dist = l->value("min_dist", lp.min_dist);
    lp.spread = l->value("spread", lp.spread);
    lp.epochs = l->value("epochs", lp.epochs);
    lp.negative_samples = l->value("negative_samples", lp.negative_samples);
    lp.learning_rate = l->value("learning_rate", lp.learning_rate);
    lp.seed = l->value("seed", lp.seed);
    lp.exact_knn_limit = l->value("exact_knn_limit", lp.exact_knn_limit);
    c.map.k_anchors = l->value("k_anchors", c.map.k_anchors);
    c.map.field = l->value("field", c.map.field);
    c.map.lod.preview_fraction = l->value("preview_fraction", c.map.lod.preview_fraction);
    c.map.lod.point_floor = l->value("point_floor", c.map.lod.point_floor);
    c.map.lod.seed = l->value("lod_seed", c.map.lod.seed);
  }
  if (auto l = j.find("labels"); l != j.end()) {
    const auto backend = l->value("backend", std::string("template-mock"));
    if (backend == "remote-llm") c.labeler = GeneratorKind::RemoteLlm;
    else if (backend != "template-mock") throw ValidationError("unknown label backend '" + backend + "'");
    if (l->contains("llm")) read_remote((*l)["llm"], c.labeler_llm);
  }
  if (auto s = j.find("server"); s != j.end()) {
    auto& sv = c.server;
    sv.host = s->value("host", sv.host);
    sv.port = s->value("port", sv.port);
    sv.static_dir = s->value("static_dir", std::string());
    sv.images = image_kind(s->value("images", std::string(image_kind_name(sv.images))));
    if (s->contains("image_service")) read_remote((*s)["image_service"], sv.image_service);
    sv.service.viewport_cap = s->value("viewport_cap", sv.service.viewport_cap);
    sv.service.history_cap = s->value("history_cap", sv.service.history_cap);
    sv.service.max_search_k = s->value("max_search_k", sv.service.max_search_k);
    sv.service.generate_in_flight = s->value("generate_in_flight", sv.service.generate_in_flight);
    sv.service.default_image_seed = s->value("default_image_seed", sv.service.default_image_seed);
  }
  c.generation.embedder = c.embedder;
  return c;
}

AtlasConfig AtlasConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  const auto j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ValidationError("config " + path.string() + " is not valid JSON");
  return from_json(j);
}

void AtlasConfig::apply_env() {
  env_override("ATLAS_EMBED_ENDPOINT", "ATLAS_EMBED_TOKEN", embedder.remote);
  env_override("ATLAS_LLM_ENDPOINT", "ATLAS_LLM_TOKEN", generation.llm);
  env_override("ATLAS_LLM_ENDPOINT", "ATLAS_LLM_TOKEN", labeler_llm);
  env_override("ATLAS_IMAGE_ENDPOINT", "ATLAS_IMAGE_TOKEN", generation.image_service);
  env_override("ATLAS_IMAGE_ENDPOINT", "ATLAS_IMAGE_TOKEN", server.image_service);
  env_override("ATLAS_NSFW_ENDPOINT", "ATLAS_NSFW_TOKEN", generation.nsfw.remote);
  generation.embedder = embedder;
}

json AtlasConfig::to_json() const {
  json j;
  j["threads"] = threads;
  j["generation"] = generation.to_json();
  j["generation"]["llm"] = remote_json(generation.llm);
  j["generation"]["image_service"] = remote_json(generation.image_service);
  j["generation"]["nsfw"]["remote"] = remote_json(generation.nsfw.remote);
  j["generation"]["max_in_flight"] = generation.max_in_flight;
  j["embedder"] = embedder_to_json(embedder);
  j["embedder"]["remote"] = remote_json(embedder.remote);
  j["index"] = {{"nlist", index.nlist}, {"m", index.m},          {"bits_per_code", index.bits_per_code},
                {"nprobe", index.nprobe}, {"train_iters", index.train_iters}, {"seed", index.seed}};
  const auto& lp = map.layout;
  j["layout"] = {{"n_neighbors", lp.n_neighbors},
                 {"min_dist", lp.min_dist},
                 {"spread", lp.spread},
                 {"epochs", lp.epochs},
                 {"negative_samples", lp.negative_samples},
                 {"learning_rate", lp.learning_rate},
                 {"seed", lp.seed},
                 {"exact_knn_limit", lp.exact_knn_limit},
                 {"k_anchors", map.k_anchors},
                 {"field", map.field},
                 {"preview_fraction", map.lod.preview_fraction},
                 {"point_floor", map.lod.point_floor},
                 {"lod_seed", map.lod.seed}};
  j["labels"] = {{"backend", labeler == GeneratorKind::TemplateMock ? "template-mock" : "remote-llm"},
                 {"llm", remote_json(labeler_llm)}};
  j["server"] = {{"host", server.host},
                 {"port", server.port},
                 {"static_dir", server.static_dir.string()},
                 {"images", image_kind_name(server.images)},
                 {"image_service", remote_json(server.image_service)},
                 {"viewport_cap", server.service.viewport_cap},
                 {"history_cap", server.service.history_cap},
                 {"max_search_k", server.service.max_search_k},
                 {"generate_in_flight", server.service.generate_in_flight},
                 {"default_image_seed", server.service.default_image_seed}};
  return j;
}

}  // namespace atlas
