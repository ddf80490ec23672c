#pragma once

#include <chrono>
#include <string>

#include "json.hpp"

namespace logicl::http {

struct Endpoint {
    std::string origin;     ///< scheme://host[:port]
    std::string base_path;  ///< path prefix without trailing slash, possibly empty
};

/// Splits "http://host:8000/prefix" into origin and base path. Throws ConfigError.
Endpoint parse_endpoint(const std::string& url);

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{200};
};

/// POSTs `body` to origin + base_path + `path` and returns the parsed JSON reply.
/// Transport failures, non-2xx statuses and non-JSON replies raise TransportError
/// once `retry.max_retries` extra attempts (exponential backoff) are exhausted.
nlohmann::json post_json(const Endpoint& endpoint, const std::string& path,
                         const nlohmann::json& body, std::chrono::duration<double> timeout,
                         const std::string& bearer_token, const RetryPolicy& retry);

}  // namespace logicl::http
