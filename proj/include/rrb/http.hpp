#pragma once

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rrb/common.hpp"

namespace rrb::http {

struct Url {
    std::string base;  // scheme://host:port
    std::string path;  // leading '/'
};

inline Url parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        raise(Errc::bad_config, "endpoint is not a URL: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

// POST a JSON body, retrying transient failures with exponential backoff.
// Attempts = 1 + retries. 4xx responses are not retried.
inline nlohmann::json post_json(const std::string& endpoint, const nlohmann::json& body,
                                int retries, const std::string& bearer_token = {}) {
    const Url url = parse_url(endpoint);
    const std::string payload = body.dump();
    std::string last_error = "no attempt made";
    int backoff_ms = 100;
    for (int attempt = 0; attempt <= retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
            backoff_ms *= 2;
        }
        httplib::Client client(url.base);
        client.set_connection_timeout(10);
        client.set_read_timeout(60);
        httplib::Headers headers;
        if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
        auto res = client.Post(url.path, headers, payload, "application/json");
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            auto parsed = nlohmann::json::parse(res->body, nullptr, false);
            if (parsed.is_discarded())
                raise(Errc::transport_error,
                      "service at " + endpoint + " returned invalid JSON");
            return parsed;
        }
        last_error = "HTTP " + std::to_string(res->status);
        if (res->status >= 400 && res->status < 500) break;
    }
    raise(Errc::service_unavailable,
          "service at " + endpoint + " unavailable after " + std::to_string(retries + 1) +
              " attempts (" + last_error + ")");
}

inline std::optional<std::string> env_var(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

}  // namespace rrb::http
