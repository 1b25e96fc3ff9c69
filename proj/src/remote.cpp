#include "atlas/remote.hpp"

#include <httplib.h>

#include <thread>

#include "atlas/error.hpp"

namespace atlas {

namespace {

struct SplitUrl {
  std::string base;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint URL needs a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable_status(int status) { return status == 0 || status == 429 || status >= 500; }

RawResponse attempt(const RemoteEndpoint& ep, const SplitUrl& url, const std::string& payload) {
  httplib::Client client(url.base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(ep.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(ep.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!ep.token.empty()) headers.emplace("Authorization", "Bearer " + ep.token);
  auto res = client.Post(url.path, headers, payload, "application/json");
  if (!res) throw BackendError("request to " + ep.url + " failed: " + httplib::to_string(res.error()), 0, true);
  RawResponse out{res->status, res->get_header_value("Content-Type"), res->body};
  if (res->status < 200 || res->status >= 300)
    throw BackendError("request to " + ep.url + " returned HTTP " + std::to_string(res->status), res->status,
                       retryable_status(res->status));
  return out;
}

}  // namespace

RawResponse post_json_raw(const RemoteEndpoint& endpoint, const nlohmann::json& body) {
  if (endpoint.url.empty()) throw ValidationError("remote endpoint is not configured");
  const auto url = split_url(endpoint.url);
  const std::string payload = body.dump();
  auto delay = endpoint.backoff;
  for (int attempt_no = 0;; ++attempt_no) {
    try {
      return attempt(endpoint, url, payload);
    } catch (const BackendError& e) {
      if (!e.retryable() || attempt_no >= endpoint.retries) throw;
    }
    std::this_thread::sleep_for(delay);
    delay *= 2;
  }
}

nlohmann::json post_json(const RemoteEndpoint& endpoint, const nlohmann::json& body) {
  auto raw = post_json_raw(endpoint, body);
  try {
    return nlohmann::json::parse(raw.body);
  } catch (const nlohmann::json::exception& e) {
    throw BackendError("malformed JSON from " + endpoint.url + ": " + e.what(), raw.status, false);
  }
}

}  // namespace atlas
