// prompt-atlas: generate, embed, index, lay out, serve and benchmark a prompt map.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "atlas/bench.hpp"
#include "atlas/config.hpp"
#include "atlas/dedup.hpp"
#include "atlas/error.hpp"
#include "atlas/http_server.hpp"
#include "atlas/parallel.hpp"
#include "atlas/pipeline.hpp"

using namespace atlas;
using nlohmann::json;

namespace {

std::atomic<bool> g_reload{false};
httplib::Server* g_server = nullptr;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
  bool json_out = false;
};

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ValidationError("'" + item + "' is not a non-negative integer");
    out.push_back(static_cast<T>(v));
  }
  return out;
}

void emit(const Globals& g, const json& summary, const std::string& text) {
  if (g.json_out) std::cout << summary.dump(2) << '\n';
  else if (!text.empty()) std::cout << text;
}

std::vector<std::string> resolve_fields(const std::string& list) {
  std::vector<std::string> out;
  if (list.empty() || list == "all") {
    for (auto f : kSearchFields) out.emplace_back(f);
    return out;
  }
  std::stringstream ss(list);
  std::string f;
  while (std::getline(ss, f, ','))
    if (!f.empty()) {
      check_search_field(f);
      out.push_back(f);
    }
  return out;
}

std::vector<std::string> read_text_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

std::unique_ptr<TextBackend> make_labeler(const AtlasConfig& cfg) {
  if (cfg.labeler == GeneratorKind::TemplateMock) return std::make_unique<TemplateMockBackend>();
  if (cfg.labeler_llm.url.empty()) throw ValidationError("labels.backend remote-llm needs labels.llm.url");
  return std::make_unique<RemoteLlmBackend>(cfg.labeler_llm, InstructionTemplates(), cfg.generation.max_in_flight);
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("prompt-atlas"));
  CLI::App app{"prompt-atlas: semantic map engine for text-to-image prompt corpora"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--seed", g.seed, "seed for the subcommand's main random process");
  app.add_option("--threads", g.threads, "cap on worker threads (0: all cores)");
  app.add_flag("--json", g.json_out, "print a JSON report to stdout");

  // generate
  auto* gen = app.add_subcommand("generate", "run the prompt expansion pipeline");
  std::string gen_out;
  std::string fanout_text;
  std::optional<std::size_t> gen_categories, gen_passes;
  bool no_dedup = false;
  gen->add_option("--out", gen_out, "artifact directory")->required();
  gen->add_option("--fanout", fanout_text, "subcats,subsubcats,ideas,locations,subjects");
  gen->add_option("--categories", gen_categories, "use only the first N seed categories");
  gen->add_option("--passes", gen_passes, "subcategory passes over the seed categories");
  gen->add_flag("--no-dedup", no_dedup, "skip per-stage deduplication");

  // embed
  auto* emb = app.add_subcommand("embed", "embed the prompt and annotation fields of a corpus");
  std::string emb_dir, emb_fields;
  emb->add_option("--dir", emb_dir, "artifact directory")->required();
  emb->add_option("--fields", emb_fields, "comma list of fields, or 'all'");

  // index
  auto* idx = app.add_subcommand("index", "build IVFPQ indexes from embeddings");
  std::string idx_dir, idx_fields;
  std::optional<std::uint32_t> idx_nlist, idx_m, idx_nprobe;
  idx->add_option("--dir", idx_dir, "artifact directory")->required();
  idx->add_option("--fields", idx_fields, "comma list of fields, or 'all'");
  idx->add_option("--nlist", idx_nlist, "coarse cells");
  idx->add_option("--m", idx_m, "subquantizers");
  idx->add_option("--nprobe", idx_nprobe, "cells probed per query");

  // layout
  auto* lay = app.add_subcommand("layout", "2D layout, density grid, labels and level of detail");
  std::string lay_dir;
  std::optional<std::uint32_t> lay_anchors, lay_epochs, lay_neighbors;
  lay->add_option("--dir", lay_dir, "artifact directory")->required();
  lay->add_option("--k-anchors", lay_anchors, "number of label anchors");
  lay->add_option("--epochs", lay_epochs, "optimization epochs");
  lay->add_option("--n-neighbors", lay_neighbors, "neighbourhood size");

  // serve
  auto* srv = app.add_subcommand("serve", "serve the map API over HTTP");
  std::string srv_dir, srv_host, srv_static;
  std::optional<int> srv_port;
  srv->add_option("--dir", srv_dir, "artifact directory")->required();
  srv->add_option("--host", srv_host, "bind address");
  srv->add_option("--port", srv_port, "port");
  srv->add_option("--static", srv_static, "directory served at /");

  // bench
  auto* bench = app.add_subcommand("bench", "recall, diversity and length benchmarks");
  std::string mode;
  bench->add_option("mode", mode, "recall | diversity | length")
      ->required()
      ->check(CLI::IsMember({"recall", "diversity", "length"}));
  std::string b_corpus, b_texts, b_embeddings, b_csv, b_nprobes = "1,4,16,64", b_checkpoints;
  std::size_t b_n = 10000, b_queries = 100, b_k = 10, b_rerank = 0;
  std::uint32_t b_dim = 128, b_nlist = 64, b_m = 8;
  bool b_exact = false, b_dedup_exact = true;
  bench->add_option("--corpus", b_corpus, "corpus.jsonl (diversity: subject captions, length: prompts)");
  bench->add_option("--texts", b_texts, "text file, one item per line");
  bench->add_option("--embeddings", b_embeddings, "recall: base vectors instead of random ones");
  bench->add_option("--csv", b_csv, "also write the CSV report here");
  bench->add_option("--n", b_n, "recall: random base size");
  bench->add_option("--dim", b_dim, "recall: random vector dimension");
  bench->add_option("--queries", b_queries, "recall: query count");
  bench->add_option("--k", b_k, "recall: neighbours compared");
  bench->add_option("--nlist", b_nlist, "recall: coarse cells");
  bench->add_option("--m", b_m, "recall: subquantizers");
  bench->add_option("--nprobe", b_nprobes, "recall: comma list of nprobe values");
  bench->add_option("--rerank", b_rerank, "recall: exact re-rank shortlist (0: off)");
  bench->add_flag("--exact", b_exact, "recall: nprobe = nlist and re-rank the whole corpus");
  bench->add_option("--checkpoints", b_checkpoints, "diversity: comma list of sample counts");
  bench->add_flag("!--approx", b_dedup_exact, "diversity: approximate dedup instead of exact");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    AtlasConfig cfg = g.config_path.empty() ? AtlasConfig{} : AtlasConfig::load(g.config_path);
    cfg.apply_env();
    if (g.threads) cfg.threads = g.threads;
    set_thread_limit(cfg.threads);

    if (*gen) {
      if (g.seed) cfg.generation.seed = *g.seed;
      if (!fanout_text.empty()) {
        const auto f = parse_list<std::size_t>(fanout_text);
        if (f.size() != 5) throw ValidationError("--fanout needs five comma-separated values");
        cfg.generation.fanout = {f[0], f[1], f[2], f[3], f[4]};
      }
      if (gen_categories) {
        const auto& all = seed_categories();
        if (*gen_categories == 0 || *gen_categories > all.size())
          throw ValidationError("--categories must be in [1, " + std::to_string(all.size()) + "]");
        cfg.generation.categories.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(*gen_categories));
      }
      if (gen_passes) cfg.generation.passes = *gen_passes;
      if (no_dedup) cfg.generation.dedup.reset();
      spdlog::info("resolved config: {}", cfg.to_json().dump());
      const auto result = run_pipeline(cfg.generation, gen_out);
      emit(g, result.manifest,
           "wrote " + std::to_string(result.records.size()) + " prompts to " + result.corpus_path.string() + "\n");
    } else if (*emb) {
      if (g.seed) cfg.embedder.seed = *g.seed;
      spdlog::info("resolved config: {}", cfg.to_json().dump());
      const auto fields = resolve_fields(emb_fields);
      const auto rep = embed_corpus(emb_dir, cfg.embedder, fields);
      emit(g, {{"rows", rep.rows}, {"fields", rep.fields}, {"embedder", embedder_to_json(cfg.embedder)}},
           "embedded " + std::to_string(rep.rows) + " records x " + std::to_string(rep.fields.size()) + " fields\n");
    } else if (*idx) {
      if (g.seed) cfg.index.seed = *g.seed;
      if (idx_nlist) cfg.index.nlist = *idx_nlist;
      if (idx_m) cfg.index.m = *idx_m;
      if (idx_nprobe) cfg.index.nprobe = *idx_nprobe;
      spdlog::info("resolved config: {}", cfg.to_json().dump());
      std::vector<std::string> fields;
      for (const auto& f : resolve_fields(idx_fields))
        if (idx_fields.empty() ? std::filesystem::exists(embeddings_path(idx_dir, f)) : true) fields.push_back(f);
      const auto reps = index_corpus(idx_dir, cfg.index, fields);
      json arr = json::array();
      std::string text;
      for (const auto& r : reps) {
        arr.push_back({{"field", r.field},
                       {"vectors", r.vectors},
                       {"written", r.written},
                       {"nlist", r.params.nlist},
                       {"m", r.params.m},
                       {"nprobe", r.params.nprobe}});
        text += r.field + ": " + std::to_string(r.vectors) + " vectors" + (r.written ? "" : " (no index, exact scan)") + "\n";
      }
      emit(g, {{"indexes", arr}}, text);
    } else if (*lay) {
      if (g.seed) {
        cfg.map.layout.seed = *g.seed;
        cfg.map.lod.seed = *g.seed;
      }
      if (lay_anchors) cfg.map.k_anchors = *lay_anchors;
      if (lay_epochs) cfg.map.layout.epochs = *lay_epochs;
      if (lay_neighbors) cfg.map.layout.n_neighbors = *lay_neighbors;
      spdlog::info("resolved config: {}", cfg.to_json().dump());
      auto labeler = make_labeler(cfg);
      const auto map = layout_corpus(lay_dir, cfg.map, *labeler);
      const auto cov = label_coverage(map.positions, map.anchors);
      std::size_t previews = 0;
      for (auto p : map.lod.preview) previews += p;
      emit(g,
           {{"points", map.positions.size()},
            {"grid_total", map.grid.total()},
            {"anchors", map.anchors.size()},
            {"previews", previews},
            {"label_coverage", {{"p95", cov.p95}, {"max", cov.max}, {"orphans", cov.orphans}}}},
           "laid out " + std::to_string(map.positions.size()) + " points, " + std::to_string(map.anchors.size()) +
               " labels, " + std::to_string(previews) + " previews\n");
    } else if (*srv) {
      if (!srv_host.empty()) cfg.server.host = srv_host;
      if (srv_port) cfg.server.port = *srv_port;
      if (!srv_static.empty()) cfg.server.static_dir = srv_static;
      if (g.seed) cfg.server.service.default_image_seed = *g.seed;
      spdlog::info("resolved config: {}", cfg.to_json().dump());
      std::shared_ptr<KvStore> generated;
      auto images = make_image_backend(cfg.server.images, cfg.server.image_service);
      if (images) generated = std::make_shared<KvStore>(std::filesystem::path(srv_dir) / kImagesFile);
      MapService service(Snapshot::load(srv_dir), cfg.server.service, std::move(images), generated);
      httplib::Server server;
      mount_api(server, service);
      if (!cfg.server.static_dir.empty() && !server.set_mount_point("/", cfg.server.static_dir.string()))
        throw ValidationError("static directory " + cfg.server.static_dir.string() + " does not exist");
      g_server = &server;
      std::signal(SIGHUP, [](int) { g_reload = true; });
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      std::jthread reloader([&](std::stop_token st) {
        while (!st.stop_requested()) {
          std::this_thread::sleep_for(std::chrono::milliseconds(200));
          if (!g_reload.exchange(false)) continue;
          try {
            service.swap_snapshot(Snapshot::load(srv_dir));
          } catch (const std::exception& e) {
            spdlog::error("reload failed, keeping the current snapshot: {}", e.what());
          }
        }
      });
      spdlog::info("listening on http://{}:{} (SIGHUP reloads {})", cfg.server.host, cfg.server.port, srv_dir);
      if (!server.listen(cfg.server.host, cfg.server.port))
        throw IoError("cannot listen on " + cfg.server.host + ":" + std::to_string(cfg.server.port));
    } else if (*bench) {
      const std::uint64_t seed = g.seed.value_or(7);
      std::string csv;
      json summary;
      if (mode == "recall") {
        EmbeddingMatrix base = b_embeddings.empty() ? random_unit_vectors(b_n, b_dim, seed) : read_embeddings(b_embeddings);
        const auto queries = random_unit_vectors(b_queries, base.dim(), seed ^ 0x9e3779b97f4a7c15ULL);
        IvfPqParams p = cfg.index;
        p.nlist = b_nlist;
        p.m = b_m;
        p.seed = seed;
        auto nprobes = parse_list<std::uint32_t>(b_nprobes);
        std::size_t rerank = b_rerank;
        if (b_exact) {
          nprobes = {p.nlist};
          rerank = base.count();
        }
        p.nprobe = std::min(p.nlist, *std::max_element(nprobes.begin(), nprobes.end()));
        const auto rep = recall_bench(base, queries, p, nprobes, b_k, rerank);
        summary = rep.to_json();
        csv = "nprobe,recall\n";
        for (const auto& pt : rep.curve) csv += std::to_string(pt.nprobe) + "," + std::to_string(pt.recall) + "\n";
      } else {
        std::vector<std::string> texts;
        if (!b_texts.empty()) {
          texts = read_text_lines(b_texts);
        } else if (!b_corpus.empty()) {
          for (const auto& r : read_corpus(b_corpus)) {
            if (r.nsfw_flagged) continue;
            texts.push_back(mode == "diversity" ? r.lineage.subject_caption : r.prompt);
          }
        } else {
          throw ValidationError("bench " + mode + " needs --corpus or --texts");
        }
        if (mode == "diversity") {
          std::vector<std::size_t> checkpoints = parse_list<std::size_t>(b_checkpoints);
          if (checkpoints.empty())
            for (std::size_t i = 1; i <= 10; ++i) checkpoints.push_back(std::max<std::size_t>(1, texts.size() * i / 10));
          checkpoints.erase(std::unique(checkpoints.begin(), checkpoints.end()), checkpoints.end());
          DedupParams dp = cfg.generation.dedup.value_or(DedupParams{});
          dp.exact = b_dedup_exact;
          const auto curve = diversity_curve(texts, checkpoints, cfg.embedder, dp);
          csv = "sample_count,unique_count\n";
          for (std::size_t i = 0; i < curve.sample_counts.size(); ++i)
            csv += std::to_string(curve.sample_counts[i]) + "," + std::to_string(curve.unique_counts[i]) + "\n";
          summary = {{"texts", texts.size()},
                     {"cos_threshold", dp.cos_threshold},
                     {"exact", dp.exact},
                     {"sample_counts", curve.sample_counts},
                     {"unique_counts", curve.unique_counts}};
        } else {
          const auto st = length_stats(texts);
          csv = "tokens,count\n";
          for (std::size_t t = 0; t < st.histogram.size(); ++t)
            if (st.histogram[t]) csv += std::to_string(t) + "," + std::to_string(st.histogram[t]) + "\n";
          summary = {{"count", st.count}, {"mean", st.mean}, {"stddev", st.stddev}, {"histogram", st.histogram}};
        }
      }
      if (!b_csv.empty()) write_file(b_csv, csv);
      emit(g, summary, csv);
    }
    return 0;
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}
