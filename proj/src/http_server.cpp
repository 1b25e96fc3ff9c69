#include "atlas/http_server.hpp"

#include <spdlog/spdlog.h>

#include <charconv>

#include "atlas/error.hpp"

namespace atlas {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  if (body.contains("snapshot_version")) res.set_header(kVersionHeader, std::to_string(body["snapshot_version"].get<std::uint64_t>()));
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, std::uint64_t version, int status, const std::string& message,
                json extra = json::object()) {
  extra["error"] = message;
  extra["snapshot_version"] = version;
  send_json(res, extra, status);
}

std::string session_of(const httplib::Request& req) {
  auto s = req.get_header_value(kSessionHeader);
  return s.empty() ? "default" : s;
}

double number_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw ValidationError(std::string("missing query parameter '") + name + "'");
  const auto text = req.get_param_value(name);
  double v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ValidationError(std::string("query parameter '") + name + "' is not a number");
  return v;
}

std::uint64_t id_param(const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) throw ValidationError("'" + text + "' is not a valid id");
  return v;
}

json parse_body(const httplib::Request& req) {
  auto body = json::parse(req.body, nullptr, false);
  if (body.is_discarded()) throw ValidationError("request body is not valid JSON");
  return body;
}

// Runs `fn` against one snapshot and maps exceptions to status codes.
template <typename Fn>
void guarded(MapService& service, httplib::Response& res, Fn&& fn) {
  const auto snap = service.snapshot();
  try {
    fn(*snap);
  } catch (const ValidationError& e) {
    send_error(res, snap->version(), 400, e.what());
  } catch (const NotFound& e) {
    send_error(res, snap->version(), 404, e.what());
  } catch (const BackendError& e) {
    send_error(res, snap->version(), e.status() == 0 ? 504 : 502, e.what(),
               {{"status", e.status()}, {"retryable", e.retryable()}});
  } catch (const std::exception& e) {
    spdlog::error("request failed: {}", e.what());
    send_error(res, snap->version(), 500, e.what());
  }
}

}  // namespace

void mount_api(httplib::Server& server, MapService& service) {
  server.Get("/api/viewport", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot& snap) {
      const BBox box{number_param(req, "minx"), number_param(req, "miny"), number_param(req, "maxx"),
                     number_param(req, "maxy")};
      send_json(res, service.viewport(snap, box, number_param(req, "zoom")));
    });
  });

  server.Get("/api/labels", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot& snap) { send_json(res, service.labels(snap, number_param(req, "zoom"))); });
  });

  server.Post("/api/search", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot& snap) { send_json(res, service.search(snap, parse_body(req))); });
  });

  server.Get(R"(/api/point/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot& snap) { send_json(res, service.point(snap, id_param(req.matches[1]))); });
  });

  server.Get(R"(/api/tile/(\d+)/(\d+)/(\d+)\.png)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot& snap) {
      const auto z = static_cast<std::uint32_t>(std::min<std::uint64_t>(id_param(req.matches[1]), 64));
      const auto x = id_param(req.matches[2]), y = id_param(req.matches[3]);
      const std::vector<std::uint8_t>* png =
          (x <= UINT32_MAX && y <= UINT32_MAX) ? snap.tiles().tile(z, static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y)) : nullptr;
      if (!png) throw NotFound("no tile " + std::string(req.matches[1]) + "/" + std::string(req.matches[2]) + "/" +
                               std::string(req.matches[3]));
      res.set_header(kVersionHeader, std::to_string(snap.version()));
      res.set_content(reinterpret_cast<const char*>(png->data()), png->size(), "image/png");
    });
  });

  server.Get(R"(/api/image/([0-9A-Za-z]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot& snap) {
      const std::string key = req.matches[1];
      auto v = service.image(snap, key);
      if (!v) throw NotFound("no image with key " + key);
      res.set_header(kVersionHeader, std::to_string(snap.version()));
      res.set_content(reinterpret_cast<const char*>(v->bytes.data()), v->bytes.size(), v->mime);
    });
  });

  server.Post("/api/generate", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot&) { send_json(res, service.generate(session_of(req), parse_body(req))); });
  });

  server.Get("/api/history", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot&) { send_json(res, service.history(session_of(req))); });
  });

  server.Delete(R"(/api/history/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(service, res, [&](const Snapshot& snap) {
      const auto id = id_param(req.matches[1]);
      if (!service.delete_history(session_of(req), id)) throw NotFound("no history entry " + std::to_string(id));
      send_json(res, {{"snapshot_version", snap.version()}, {"deleted", id}});
    });
  });
}

}  // namespace atlas
