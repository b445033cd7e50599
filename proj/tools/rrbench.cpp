// rrbench: evaluate retrieval-aware ad rewriting end to end.
//
// Subcommands: ingest, index, rewrite, evaluate, ablate, report, serve-reward.
// Every flag overrides the matching config-file key; the effective config is
// snapshotted in the run manifest.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 backend error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rrb/ablation.hpp"
#include "rrb/config.hpp"
#include "rrb/ingest.hpp"
#include "rrb/pipeline.hpp"
#include "rrb/report.hpp"
#include "rrb/service.hpp"

namespace {

struct Overrides {
    std::string config_path;
    std::optional<std::string> ads, queries, rewrites, reports_dir, index_path, strategy;
    std::optional<std::string> weights_csv, k_grid_csv;
    std::optional<std::string> embedder_kind, embedder_endpoint;
    std::optional<std::string> rewrite_llm_kind, rewrite_llm_endpoint;
    std::optional<std::string> answer_llm_kind, answer_llm_endpoint;
    std::optional<std::size_t> dim, reward_k, workers;
    std::optional<std::uint64_t> seed;
    std::optional<int> port;
    bool resume = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--ads", o.ads, "ads.jsonl path");
    cmd->add_option("--queries", o.queries, "queries.jsonl path");
    cmd->add_option("--rewrites", o.rewrites, "rewrites.jsonl path");
    cmd->add_option("--reports-dir", o.reports_dir, "output directory for reports");
    cmd->add_option("--index", o.index_path, "index snapshot path");
    cmd->add_option("--strategy", o.strategy,
                    "general-rewrite | instruction-cot | few-shot-cot");
    cmd->add_option("--k", o.reward_k, "top-k pool for distractor sampling / reward");
    cmd->add_option("--k-grid", o.k_grid_csv, "metric cutoffs, e.g. 1,3,5,10,20,30");
    cmd->add_option("--weights", o.weights_csv, "loss weights a,b,g");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--workers", o.workers, "worker pool size");
    cmd->add_option("--port", o.port, "serve-reward port");
    cmd->add_option("--embedder-kind", o.embedder_kind, "deterministic-test | remote-service");
    cmd->add_option("--embedder-endpoint", o.embedder_endpoint, "embedding service URL");
    cmd->add_option("--embedder-dim", o.dim, "embedding dimension");
    cmd->add_option("--rewrite-llm", o.rewrite_llm_kind,
                    "mock-echo | mock-topk-citer | remote-chat");
    cmd->add_option("--rewrite-llm-endpoint", o.rewrite_llm_endpoint, "rewrite LLM URL");
    cmd->add_option("--answer-llm", o.answer_llm_kind,
                    "mock-echo | mock-topk-citer | remote-chat");
    cmd->add_option("--answer-llm-endpoint", o.answer_llm_endpoint, "answer LLM URL");
    cmd->add_flag("--resume", o.resume, "reuse existing successful rewrites");
}

rrb::ExperimentConfig build_config(const Overrides& o) {
    rrb::ExperimentConfig cfg;
    if (!o.config_path.empty()) cfg = rrb::load_config(o.config_path);
    if (o.ads) cfg.ads_path = *o.ads;
    if (o.queries) cfg.queries_path = *o.queries;
    if (o.rewrites) cfg.rewrites_path = *o.rewrites;
    if (o.reports_dir) cfg.reports_dir = *o.reports_dir;
    if (o.index_path) cfg.index_path = *o.index_path;
    if (o.strategy) cfg.strategy = rrb::prompt_kind_from_string(*o.strategy);
    if (o.reward_k) cfg.reward_k = *o.reward_k;
    if (o.k_grid_csv) {
        cfg.k_grid.clear();
        for (const auto& part : rrb::split(*o.k_grid_csv, ','))
            cfg.k_grid.push_back(std::stoul(rrb::trim(part)));
    }
    if (o.weights_csv) {
        auto parts = rrb::split(*o.weights_csv, ',');
        if (parts.size() != 3)
            rrb::raise(rrb::Errc::bad_config, "--weights expects three values a,b,g");
        cfg.weights = {std::stod(rrb::trim(parts[0])), std::stod(rrb::trim(parts[1])),
                       std::stod(rrb::trim(parts[2]))};
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.workers) cfg.workers = *o.workers;
    if (o.port) cfg.port = *o.port;
    if (o.resume) cfg.resume = true;
    if (o.embedder_kind)
        cfg.embedder.kind = rrb::detail::embedder_kind_from_string(*o.embedder_kind);
    if (o.embedder_endpoint) cfg.embedder.endpoint = *o.embedder_endpoint;
    if (o.dim) cfg.embedder.dim = *o.dim;
    if (o.rewrite_llm_kind)
        cfg.rewrite_llm.kind = rrb::detail::llm_kind_from_string(*o.rewrite_llm_kind);
    if (o.rewrite_llm_endpoint) cfg.rewrite_llm.endpoint = *o.rewrite_llm_endpoint;
    if (o.answer_llm_kind)
        cfg.answer_llm.kind = rrb::detail::llm_kind_from_string(*o.answer_llm_kind);
    if (o.answer_llm_endpoint) cfg.answer_llm.endpoint = *o.answer_llm_endpoint;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rrbench: retrieval-aware ad rewrite evaluation"};
    app.require_subcommand(1);

    Overrides o;
    std::size_t generate_queries = 0;
    std::vector<std::string> report_csvs;
    std::vector<std::string> report_labels;
    std::string report_out;

    auto* ingest = app.add_subcommand("ingest", "validate corpora and report coverage");
    add_common(ingest, o);
    ingest->add_option("--generate-queries", generate_queries,
                       "generate N queries per (domain, subdomain) pair");

    add_common(app.add_subcommand("index", "embed the ad corpus and write a snapshot"), o);
    add_common(app.add_subcommand("rewrite", "rewrite every ad with the configured strategy"), o);
    add_common(app.add_subcommand("evaluate", "compute dMRR/dDIR reports for a rewrite set"), o);
    add_common(app.add_subcommand("ablate", "metric grid + reward across loss weightings"), o);
    add_common(app.add_subcommand("serve-reward", "HTTP reward endpoint for RL trainers"), o);

    auto* report = app.add_subcommand("report", "render metric CSVs as tables and plot series");
    report->add_option("csv", report_csvs, "metric CSV files");
    report->add_option("--labels", report_labels, "one label per CSV");
    report->add_option("--out", report_out, "directory for per-run series CSVs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("report")) {
            rrb::cmd_report(report_csvs, report_labels, report_out);
            return 0;
        }
        const rrb::ExperimentConfig cfg = build_config(o);
        if (app.got_subcommand("ingest")) {
            rrb::cmd_ingest(cfg, generate_queries);
        } else if (app.got_subcommand("index")) {
            rrb::cmd_index(cfg);
        } else if (app.got_subcommand("rewrite")) {
            rrb::cmd_rewrite(cfg);
        } else if (app.got_subcommand("evaluate")) {
            rrb::cmd_evaluate(cfg);
        } else if (app.got_subcommand("ablate")) {
            rrb::cmd_ablate(cfg);
        } else if (app.got_subcommand("serve-reward")) {
            rrb::RewardService service(cfg);
            std::cout << "serving /reward and /healthz on port " << cfg.port << "\n";
            service.run();
        }
        return 0;
    } catch (const rrb::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (e.code() == rrb::Errc::bad_config) return 1;
        return e.is_backend() ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
