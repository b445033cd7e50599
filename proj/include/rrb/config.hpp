#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrb/common.hpp"
#include "rrb/embedding.hpp"
#include "rrb/llm_gateway.hpp"
#include "rrb/loss.hpp"

namespace rrb {

constexpr const char* kArtifactVersion = "rrbench 0.1.0";

/// Everything one run needs. The config file is a JSON document with the same
/// field names; every CLI flag overrides its key and the effective config is
/// snapshotted into the run manifest.
struct ExperimentConfig {
    std::string ads_path;
    std::string queries_path;
    std::string rewrites_path;
    std::string reports_dir = "reports";
    std::string index_path;  // optional snapshot; empty = embed in-run

    EmbedderDescriptor embedder;
    LlmDescriptor answer_llm{LlmKind::mock_topk_citer};
    LlmDescriptor rewrite_llm{LlmKind::mock_echo};
    PromptKind strategy = PromptKind::instruction_cot;

    std::vector<std::size_t> k_grid = {1, 3, 5, 10, 20, 30};
    LossWeights weights;
    std::size_t reward_k = 10;
    std::uint64_t seed = 42;
    int port = 8787;
    bool resume = false;
    std::size_t workers = 4;
    std::size_t embed_max_in_flight = 8;

    void validate() const {
        if (k_grid.empty()) raise(Errc::bad_config, "k_grid must be nonempty");
        for (std::size_t i = 0; i < k_grid.size(); ++i) {
            if (k_grid[i] == 0) raise(Errc::bad_config, "k_grid entries must be >= 1");
            if (i > 0 && k_grid[i] <= k_grid[i - 1])
                raise(Errc::bad_config, "k_grid must be sorted ascending and distinct");
        }
        if (reward_k == 0) raise(Errc::bad_config, "reward_k must be >= 1");
        if (workers == 0) raise(Errc::bad_config, "workers must be >= 1");
        weights.validate();
    }
};

namespace detail {

inline EmbedderKind embedder_kind_from_string(const std::string& s) {
    if (s == "remote-service") return EmbedderKind::remote_service;
    if (s == "deterministic-test") return EmbedderKind::deterministic_test;
    raise(Errc::bad_config, "unknown embedder kind '" + s + "'");
}

inline const char* to_string(EmbedderKind k) {
    return k == EmbedderKind::remote_service ? "remote-service" : "deterministic-test";
}

inline LlmKind llm_kind_from_string(const std::string& s) {
    if (s == "remote-chat") return LlmKind::remote_chat;
    if (s == "mock-echo") return LlmKind::mock_echo;
    if (s == "mock-topk-citer") return LlmKind::mock_topk_citer;
    raise(Errc::bad_config, "unknown llm kind '" + s + "'");
}

inline const char* to_string(LlmKind k) {
    switch (k) {
        case LlmKind::remote_chat: return "remote-chat";
        case LlmKind::mock_echo: return "mock-echo";
        case LlmKind::mock_topk_citer: return "mock-topk-citer";
    }
    return "?";
}

inline void read_embedder(const nlohmann::json& j, EmbedderDescriptor& out) {
    if (j.contains("kind")) out.kind = embedder_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("dim")) out.dim = j["dim"].get<std::size_t>();
    if (j.contains("endpoint") && j["endpoint"].is_string())
        out.endpoint = j["endpoint"].get<std::string>();
    if (j.contains("model") && j["model"].is_string()) out.model_name = j["model"].get<std::string>();
    if (j.contains("batch_size")) out.batch_size = j["batch_size"].get<std::size_t>();
}

inline void read_llm(const nlohmann::json& j, LlmDescriptor& out) {
    if (j.contains("kind")) out.kind = llm_kind_from_string(j["kind"].get<std::string>());
    if (j.contains("endpoint") && j["endpoint"].is_string())
        out.endpoint = j["endpoint"].get<std::string>();
    if (j.contains("model") && j["model"].is_string()) out.model_name = j["model"].get<std::string>();
    if (j.contains("temperature")) out.temperature = j["temperature"].get<double>();
    if (j.contains("max_in_flight")) out.max_in_flight = j["max_in_flight"].get<std::size_t>();
    if (j.contains("retry_limit")) out.retry_limit = j["retry_limit"].get<int>();
}

inline nlohmann::json embedder_to_json(const EmbedderDescriptor& d) {
    return {{"kind", to_string(d.kind)}, {"dim", d.dim},        {"endpoint", d.endpoint},
            {"model", d.model_name},     {"batch_size", d.batch_size}};
}

inline nlohmann::json llm_to_json(const LlmDescriptor& d) {
    return {{"kind", to_string(d.kind)},          {"endpoint", d.endpoint},
            {"model", d.model_name},              {"temperature", d.temperature},
            {"max_in_flight", d.max_in_flight},   {"retry_limit", d.retry_limit}};
}

}  // namespace detail

inline void apply_config_json(const nlohmann::json& j, ExperimentConfig& cfg) {
    if (j.contains("ads")) cfg.ads_path = j["ads"].get<std::string>();
    if (j.contains("queries")) cfg.queries_path = j["queries"].get<std::string>();
    if (j.contains("rewrites")) cfg.rewrites_path = j["rewrites"].get<std::string>();
    if (j.contains("reports_dir")) cfg.reports_dir = j["reports_dir"].get<std::string>();
    if (j.contains("index")) cfg.index_path = j["index"].get<std::string>();
    if (j.contains("embedder")) detail::read_embedder(j["embedder"], cfg.embedder);
    if (j.contains("answer_llm")) detail::read_llm(j["answer_llm"], cfg.answer_llm);
    if (j.contains("rewrite_llm")) detail::read_llm(j["rewrite_llm"], cfg.rewrite_llm);
    if (j.contains("strategy"))
        cfg.strategy = prompt_kind_from_string(j["strategy"].get<std::string>());
    if (j.contains("k_grid")) cfg.k_grid = j["k_grid"].get<std::vector<std::size_t>>();
    if (j.contains("weights")) {
        const auto& w = j["weights"];
        if (w.contains("alpha")) cfg.weights.alpha = w["alpha"].get<double>();
        if (w.contains("beta")) cfg.weights.beta = w["beta"].get<double>();
        if (w.contains("gamma")) cfg.weights.gamma = w["gamma"].get<double>();
    }
    if (j.contains("reward_k")) cfg.reward_k = j["reward_k"].get<std::size_t>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("port")) cfg.port = j["port"].get<int>();
    if (j.contains("resume")) cfg.resume = j["resume"].get<bool>();
    if (j.contains("workers")) cfg.workers = j["workers"].get<std::size_t>();
    if (j.contains("embed_max_in_flight"))
        cfg.embed_max_in_flight = j["embed_max_in_flight"].get<std::size_t>();
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::bad_config, "cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::bad_config, "config '" + path + "': " + e.what());
    }
    ExperimentConfig cfg;
    apply_config_json(j, cfg);
    return cfg;
}

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    return {{"ads", cfg.ads_path},
            {"queries", cfg.queries_path},
            {"rewrites", cfg.rewrites_path},
            {"reports_dir", cfg.reports_dir},
            {"index", cfg.index_path},
            {"embedder", detail::embedder_to_json(cfg.embedder)},
            {"answer_llm", detail::llm_to_json(cfg.answer_llm)},
            {"rewrite_llm", detail::llm_to_json(cfg.rewrite_llm)},
            {"strategy", to_string(cfg.strategy)},
            {"k_grid", cfg.k_grid},
            {"weights",
             {{"alpha", cfg.weights.alpha}, {"beta", cfg.weights.beta}, {"gamma", cfg.weights.gamma}}},
            {"reward_k", cfg.reward_k},
            {"seed", cfg.seed},
            {"port", cfg.port},
            {"resume", cfg.resume},
            {"workers", cfg.workers},
            {"embed_max_in_flight", cfg.embed_max_in_flight}};
}

// ---- run manifest -------------------------------------------------------------

inline std::string fingerprint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "missing";
    std::ostringstream oss;
    oss << in.rdbuf();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a:%016llx",
                  static_cast<unsigned long long>(fnv1a64(oss.str())));
    return buf;
}

inline std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

/// Snapshot of the effective config plus input fingerprints; every report
/// directory carries exactly one.
inline nlohmann::json build_manifest(const ExperimentConfig& cfg,
                                     const std::vector<std::string>& input_files) {
    nlohmann::json fingerprints = nlohmann::json::object();
    for (const auto& f : input_files)
        if (!f.empty()) fingerprints[f] = fingerprint_file(f);
    return {{"version", kArtifactVersion},
            {"created", iso_timestamp()},
            {"config", config_to_json(cfg)},
            {"inputs", fingerprints}};
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(Errc::bad_config, "cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

}  // namespace rrb
