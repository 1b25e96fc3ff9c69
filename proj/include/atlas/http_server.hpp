#pragma once

#include <string>

#include <httplib.h>

#include "atlas/service.hpp"

namespace atlas {

inline constexpr const char* kSessionHeader = "X-Session";
inline constexpr const char* kVersionHeader = "X-Snapshot-Version";

// Registers the /api routes on `server`. Errors map to JSON bodies:
// ValidationError 400, NotFound 404, BackendError 502 (504 on timeout).
void mount_api(httplib::Server& server, MapService& service);

}  // namespace atlas
