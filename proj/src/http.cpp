#include "logicl/http.hpp"

#include <thread>

#include "httplib.h"

#include "logicl/error.hpp"

namespace logicl::http {

Endpoint parse_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' lacks a scheme");
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw ConfigError("endpoint '" + url + "' must use http or https");
    const auto path_start = url.find('/', scheme_end + 3);
    Endpoint ep;
    ep.origin = url.substr(0, path_start);
    if (path_start != std::string::npos) {
        ep.base_path = url.substr(path_start);
        while (!ep.base_path.empty() && ep.base_path.back() == '/') ep.base_path.pop_back();
    }
    if (ep.origin.size() <= scheme_end + 3) throw ConfigError("endpoint '" + url + "' has no host");
    return ep;
}

nlohmann::json post_json(const Endpoint& endpoint, const std::string& path,
                         const nlohmann::json& body, std::chrono::duration<double> timeout,
                         const std::string& bearer_token, const RetryPolicy& retry) {
    const std::string payload = body.dump();
    const std::string target = endpoint.base_path + path;
    std::string last_error;
    auto backoff = retry.initial_backoff;
    for (int attempt = 0; attempt <= retry.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Client client(endpoint.origin);
        const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(usec).count(),
                                      usec.count() % 1000000);
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(usec).count(),
                                usec.count() % 1000000);
        httplib::Headers headers;
        if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
        auto res = client.Post(target, headers, payload, "application/json");
        if (!res) {
            last_error = "request to " + endpoint.origin + target + " failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last_error = "HTTP " + std::to_string(res->status) + " from " + endpoint.origin + target;
            continue;
        }
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error&) {
            last_error = "non-JSON reply from " + endpoint.origin + target;
        }
    }
    throw TransportError(last_error + " (after " + std::to_string(retry.max_retries + 1) + " attempts)");
}

}  // namespace logicl::http
