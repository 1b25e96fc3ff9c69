#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "atlas/artifacts.hpp"
#include "atlas/pipeline.hpp"
#include "atlas/service.hpp"

namespace atlas {

struct ServerSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path static_dir;  // served at / when set
  ImageKind images = ImageKind::Procedural;
  RemoteEndpoint image_service;
  ServiceConfig service;
};

// Everything the CLI reads from the config file. Sections: generation,
// embedder, index, layout, labels, server.
struct AtlasConfig {
  GenerationConfig generation;
  EmbedderSpec embedder;
  IvfPqParams index;
  MapBuildParams map;
  GeneratorKind labeler = GeneratorKind::TemplateMock;
  RemoteEndpoint labeler_llm;
  ServerSettings server;
  std::size_t threads = 0;  // 0: hardware concurrency

  static AtlasConfig from_json(const nlohmann::json& j);
  static AtlasConfig load(const std::filesystem::path& path);
  // Remote endpoints and tokens from ATLAS_EMBED_ENDPOINT / _TOKEN,
  // ATLAS_LLM_ENDPOINT / _TOKEN, ATLAS_IMAGE_ENDPOINT / _TOKEN,
  // ATLAS_NSFW_ENDPOINT / _TOKEN.
  void apply_env();
  // Resolved configuration with tokens redacted.
  nlohmann::json to_json() const;
};

}  // namespace atlas
