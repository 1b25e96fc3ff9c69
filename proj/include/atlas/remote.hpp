#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace atlas {

// A remote JSON service: full URL (scheme://host[:port]/path) plus an
// optional bearer token.
struct RemoteEndpoint {
  std::string url;
  std::string token;
  std::chrono::milliseconds timeout{30000};
  int retries = 3;
  std::chrono::milliseconds backoff{200};  // doubled after each failed attempt
};

struct RawResponse {
  int status = 0;
  std::string content_type;
  std::string body;
};

// POSTs `body` and parses the JSON reply. Transport errors, 429 and 5xx are
// retried with exponential backoff; whatever remains is thrown as a
// BackendError carrying the last status.
nlohmann::json post_json(const RemoteEndpoint& endpoint, const nlohmann::json& body);

// Same retry policy, returns the undecoded body (for image services).
RawResponse post_json_raw(const RemoteEndpoint& endpoint, const nlohmann::json& body);

}  // namespace atlas
