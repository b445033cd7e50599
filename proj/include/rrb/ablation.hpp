#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rrb/pipeline.hpp"

namespace rrb {

struct WeightSetting {
    std::string label;
    LossWeights weights;
};

/// The six stock composite-loss weightings for the ablation grid.
inline std::vector<WeightSetting> default_weight_grid() {
    return {{"1:1:1", {1.0, 1.0, 1.0}},       {"35:45:20", {0.35, 0.45, 0.20}},
            {"45:35:20", {0.45, 0.35, 0.20}}, {"45:20:35", {0.45, 0.20, 0.35}},
            {"20:45:35", {0.20, 0.45, 0.35}}, {"30:60:10", {0.30, 0.60, 0.10}}};
}

struct AblationRow {
    std::string label;
    LossWeights weights;
    std::size_t k = 0;
    double mean_delta_mrr = 0.0;
    std::optional<double> mean_delta_dir_pp;
    std::size_t dir_absent_count = 0;
    double mean_rel_gain = 0.0;
    double mean_triplet = 0.0;
    double mean_fidelity = 0.0;
    double mean_reward = 0.0;
    std::size_t reward_ad_count = 0;
};

/// Weight grid × k grid. Metric columns come from one evaluate pass (rewrites
/// are fixed inputs, so they do not move with the weights); the reward column
/// re-weights per-ad component means computed once at the config's reward_k.
inline std::vector<AblationRow> run_ablate(const ExperimentConfig& cfg, const RunContext& ctx,
                                           const EvaluationResult& eval) {
    auto rewrite_file = load_rewrites(cfg.rewrites_path);
    std::vector<const RewritePair*> pairs;
    for (const auto& pair : rewrite_file.pairs) {
        auto rel = ctx.relevance.find(pair.ad_id);
        if (rel != ctx.relevance.end() && !rel->second.empty()) pairs.push_back(&pair);
    }

    // per-ad component means over the reward's selected queries
    struct AdComponents {
        double rel = 0.0, trip = 0.0, fid = 0.0;
    };
    std::vector<AdComponents> per_ad(pairs.size());
    const LossWeights unit{1.0, 1.0, 1.0};
    detail::parallel_for(pairs.size(), cfg.workers, [&](std::size_t p) {
        const RewritePair& pair = *pairs[p];
        std::vector<std::string> selected = ctx.relevance.at(pair.ad_id);
        std::sort(selected.begin(), selected.end());
        if (selected.size() > 3) selected.resize(3);
        AdComponents sums;
        for (const auto& qid : selected) {
            auto breakdown = total_loss(pair, ctx.queries_by_id.at(qid), ctx.index, *ctx.embedder,
                                        unit, cfg.reward_k, cfg.seed);
            sums.rel += breakdown.rel_gain;
            sums.trip += breakdown.triplet;
            sums.fid += breakdown.fidelity;
        }
        const double n = static_cast<double>(selected.size());
        per_ad[p] = {sums.rel / n, sums.trip / n, sums.fid / n};
    });

    double mean_rel = 0.0, mean_trip = 0.0, mean_fid = 0.0;
    for (const auto& c : per_ad) {
        mean_rel += c.rel;
        mean_trip += c.trip;
        mean_fid += c.fid;
    }
    if (!per_ad.empty()) {
        mean_rel /= static_cast<double>(per_ad.size());
        mean_trip /= static_cast<double>(per_ad.size());
        mean_fid /= static_cast<double>(per_ad.size());
    }

    auto grid = default_weight_grid();
    const auto same = [](const LossWeights& a, const LossWeights& b) {
        return std::abs(a.alpha - b.alpha) < 1e-12 && std::abs(a.beta - b.beta) < 1e-12 &&
               std::abs(a.gamma - b.gamma) < 1e-12;
    };
    bool in_grid = false;
    for (const auto& setting : grid) in_grid = in_grid || same(setting.weights, cfg.weights);
    if (!in_grid) {
        char label[96];
        std::snprintf(label, sizeof(label), "%g:%g:%g", cfg.weights.alpha, cfg.weights.beta,
                      cfg.weights.gamma);
        grid.push_back({label, cfg.weights});
    }

    std::vector<AblationRow> rows;
    for (const auto& setting : grid) {
        const double reward_mean = -(setting.weights.alpha * mean_rel +
                                     setting.weights.beta * mean_trip +
                                     setting.weights.gamma * mean_fid);
        for (std::size_t i = 0; i < cfg.k_grid.size(); ++i) {
            const auto& agg = eval.per_k[i];
            AblationRow row;
            row.label = setting.label;
            row.weights = setting.weights;
            row.k = cfg.k_grid[i];
            row.mean_delta_mrr = agg.mean_delta_mrr;
            row.mean_delta_dir_pp = agg.mean_delta_dir_pp;
            row.dir_absent_count = agg.dir_absent_count;
            row.mean_rel_gain = mean_rel;
            row.mean_triplet = mean_trip;
            row.mean_fidelity = mean_fid;
            row.mean_reward = reward_mean;
            row.reward_ad_count = pairs.size();
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(Errc::bad_config, "cannot write '" + path + "'");
    out << "label,alpha,beta,gamma,k,mean_delta_mrr,mean_delta_dir_pp,dir_absent_count,"
           "mean_rel_gain,mean_triplet,mean_fidelity,mean_reward,reward_ad_count\n";
    for (const auto& row : rows) {
        out << row.label << "," << detail::format_double(row.weights.alpha) << ","
            << detail::format_double(row.weights.beta) << ","
            << detail::format_double(row.weights.gamma) << "," << row.k << ","
            << detail::format_double(row.mean_delta_mrr) << ","
            << (row.mean_delta_dir_pp ? detail::format_double(*row.mean_delta_dir_pp) : "") << ","
            << row.dir_absent_count << "," << detail::format_double(row.mean_rel_gain) << ","
            << detail::format_double(row.mean_triplet) << ","
            << detail::format_double(row.mean_fidelity) << ","
            << detail::format_double(row.mean_reward) << "," << row.reward_ad_count << "\n";
    }
}

inline std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg) {
    auto ctx = prepare_context(cfg);
    auto eval = run_evaluate(cfg, ctx);
    auto rows = run_ablate(cfg, ctx, eval);
    std::filesystem::create_directories(cfg.reports_dir);
    write_ablation_csv(cfg.reports_dir + "/ablation.csv", rows);
    write_json_file(cfg.reports_dir + "/manifest.json",
                    build_manifest(cfg, {cfg.ads_path, cfg.queries_path, cfg.rewrites_path}));
    std::cout << "ablation grid: " << rows.size() << " rows -> " << cfg.reports_dir
              << "/ablation.csv\n";
    return rows;
}

}  // namespace rrb
