#pragma once

// Builds a complete artifact directory (generate, embed, index, layout) from
// the template mock, for service and acceptance tests.

#include <filesystem>
#include <string>
#include <vector>

#include "atlas/artifacts.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/text_backend.hpp"

namespace testing {

struct FixtureOptions {
  atlas::Fanout fanout{2, 5, 10, 2, 5};  // 1000 prompts from one category
  std::vector<std::string> nsfw_terms = {"dancing", "sleeping"};
  std::uint32_t epochs = 200;
  std::uint64_t seed = 42;
};

inline void build_artifacts(const std::filesystem::path& dir, const FixtureOptions& opt = {}) {
  atlas::GenerationConfig cfg;
  cfg.categories = {"city life"};
  cfg.fanout = opt.fanout;
  cfg.dedup.reset();
  cfg.seed = opt.seed;
  cfg.nsfw.blocklist = opt.nsfw_terms;
  cfg.nsfw.use_default_blocklist = false;
  cfg.images = atlas::ImageKind::Procedural;
  atlas::run_pipeline(cfg, dir);

  atlas::EmbedderSpec spec;
  std::vector<std::string> fields(atlas::kSearchFields.begin(), atlas::kSearchFields.end());
  atlas::embed_corpus(dir, spec, fields);
  atlas::IvfPqParams ip;
  ip.nlist = 16;
  ip.m = 8;
  ip.nprobe = 4;
  atlas::index_corpus(dir, ip, fields);
  atlas::MapBuildParams mp;
  mp.layout.epochs = opt.epochs;
  mp.lod.preview_fraction = 0.05;
  atlas::TemplateMockBackend labeler;
  atlas::layout_corpus(dir, mp, labeler);
}

}  // namespace testing
