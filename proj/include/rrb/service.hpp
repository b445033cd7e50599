#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rrb/pipeline.hpp"

namespace rrb {

/// HTTP reward endpoint for external RL trainers.
///
///   POST /reward  {"ad_id": ..., "before": {"title","description"},
///                  "after": {"title","description"}}
///     -> 200 {"ad_id", "reward", "breakdown": [{query_id, rel_gain, triplet,
///             fidelity, total}, ...]}
///     -> 404 unknown ad_id, 422 malformed body or no relevant queries,
///        503 embedder/backend unavailable
///   GET /healthz -> 200 {"status": "ok", ...}
///
/// All shared state (corpus, relevance, index) is immutable after startup, so
/// any number of concurrent requests score independently.
class RewardService {
public:
    explicit RewardService(ExperimentConfig cfg)
        : cfg_(std::move(cfg)), ctx_(prepare_context(cfg_)) {
        install_routes();
    }

    const RunContext& context() const noexcept { return ctx_; }

    nlohmann::json score(const nlohmann::json& body) const {
        if (!body.is_object() || !body.contains("ad_id") || !body["ad_id"].is_string() ||
            !body.contains("before") || !body.contains("after"))
            raise(Errc::parse_error, "body needs ad_id, before, after");
        const std::string ad_id = body["ad_id"].get<std::string>();
        auto it = ctx_.ads_by_id.find(ad_id);
        if (it == ctx_.ads_by_id.end()) raise(Errc::unknown_doc, "unknown ad '" + ad_id + "'");
        const AdDocument& original = *it->second;

        RewritePair pair;
        pair.ad_id = ad_id;
        pair.strategy = "service";
        pair.before = make_version(original, body["before"]);
        pair.after = make_version(original, body["after"]);

        auto result = reward(pair, ctx_.relevance, ctx_.queries_by_id, ctx_.index, *ctx_.embedder,
                             cfg_.weights, cfg_.reward_k, cfg_.seed);
        nlohmann::json breakdown = nlohmann::json::array();
        for (std::size_t i = 0; i < result.per_query.size(); ++i) {
            const auto& b = result.per_query[i];
            breakdown.push_back({{"query_id", result.selected_query_ids[i]},
                                 {"rel_gain", b.rel_gain},
                                 {"triplet", b.triplet},
                                 {"fidelity", b.fidelity},
                                 {"total", b.total}});
        }
        return {{"ad_id", ad_id}, {"reward", result.reward}, {"breakdown", breakdown}};
    }

    /// Bind to cfg.port and serve until stop(). Blocking.
    void run() {
        if (!server_.listen("0.0.0.0", cfg_.port))
            raise(Errc::bad_config, "cannot listen on port " + std::to_string(cfg_.port));
    }

    /// Test-friendly startup on an ephemeral loopback port; returns the port.
    int start_async() {
        const int port = server_.bind_to_any_port("127.0.0.1");
        if (port <= 0) raise(Errc::bad_config, "cannot bind a loopback port");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    ~RewardService() { stop(); }

private:
    static AdDocument make_version(const AdDocument& original, const nlohmann::json& fields) {
        if (!fields.is_object() || !fields.contains("title") || !fields["title"].is_string() ||
            !fields.contains("description") || !fields["description"].is_string())
            raise(Errc::parse_error, "version needs string title and description");
        AdDocument doc = original;
        doc.title = fields["title"].get<std::string>();
        doc.description = fields["description"].get<std::string>();
        if (trim(doc.title).empty() || trim(doc.description).empty())
            raise(Errc::parse_error, "title and description must be nonempty");
        return doc;
    }

    void install_routes() {
        server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json health{{"status", "ok"},
                                  {"ads", ctx_.ads.size()},
                                  {"queries", ctx_.queries.size()},
                                  {"version", kArtifactVersion}};
            res.set_content(health.dump(), "application/json");
        });
        server_.Post("/reward", [this](const httplib::Request& req, httplib::Response& res) {
            auto body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_discarded()) {
                res.status = 422;
                res.set_content(R"({"error":"invalid JSON body"})", "application/json");
                return;
            }
            try {
                res.set_content(score(body).dump(), "application/json");
            } catch (const Error& e) {
                if (e.code() == Errc::unknown_doc)
                    res.status = 404;
                else if (e.is_backend())
                    res.status = 503;
                else
                    res.status = 422;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 500;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            }
        });
    }

    ExperimentConfig cfg_;
    RunContext ctx_;
    httplib::Server server_;
    std::thread thread_;
};

}  // namespace rrb
