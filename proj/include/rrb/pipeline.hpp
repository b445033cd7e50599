#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "rrb/common.hpp"
#include "rrb/config.hpp"
#include "rrb/corpus.hpp"
#include "rrb/embedding.hpp"
#include "rrb/llm_gateway.hpp"
#include "rrb/loss.hpp"
#include "rrb/metrics.hpp"
#include "rrb/vector_index.hpp"

namespace rrb {

namespace detail {

template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& body) {
    if (n == 0) return;
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto run = [&] {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!err) err = std::current_exception();
                failed.store(true);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    return buf;
}

inline void check_csv_safe(const std::string& value) {
    if (value.find_first_of(",\"\n\r") != std::string::npos)
        raise(Errc::bad_config, "id not CSV-safe: '" + value + "'");
}

}  // namespace detail

// ---- shared run context --------------------------------------------------------

/// Inputs loaded once and shared (immutably) by evaluate / ablate / reward.
struct RunContext {
    std::vector<AdDocument> ads;
    std::vector<Query> queries;
    RelevanceMap relevance;
    std::unordered_map<std::string, Query> queries_by_id;
    std::unordered_map<std::string, const AdDocument*> ads_by_id;
    std::shared_ptr<Embedder> embedder;
    FlatIndex index;
};

/// Load corpora and build (or load) the before-index over every ad.
inline RunContext prepare_context(const ExperimentConfig& cfg) {
    cfg.validate();
    RunContext ctx;
    ctx.ads = load_ads(cfg.ads_path);
    ctx.queries = load_queries(cfg.queries_path);
    ctx.relevance = build_relevance(ctx.ads, ctx.queries);
    ctx.queries_by_id = index_queries(ctx.queries);
    for (const auto& ad : ctx.ads) ctx.ads_by_id.emplace(ad.id, &ad);
    ctx.embedder = make_embedder(cfg.embedder, cfg.embed_max_in_flight);

    if (!cfg.index_path.empty() && std::filesystem::exists(cfg.index_path)) {
        ctx.index = FlatIndex::load(cfg.index_path);
        if (ctx.index.size() != ctx.ads.size())
            raise(Errc::bad_snapshot, "snapshot holds " + std::to_string(ctx.index.size()) +
                                          " entries, corpus has " + std::to_string(ctx.ads.size()));
    } else {
        std::vector<std::string> texts;
        texts.reserve(ctx.ads.size());
        for (const auto& ad : ctx.ads) texts.push_back(ad_text(ad));
        auto embeddings = ctx.embedder->embed(texts);
        std::vector<std::pair<std::string, EmbeddingVector>> items;
        items.reserve(ctx.ads.size());
        for (std::size_t i = 0; i < ctx.ads.size(); ++i)
            items.emplace_back(ctx.ads[i].id, std::move(embeddings[i]));
        ctx.index = FlatIndex::build(std::move(items));
    }
    return ctx;
}

// ---- index command ---------------------------------------------------------------

/// Embed the whole ad corpus and persist the index snapshot plus manifest.
inline void cmd_index(const ExperimentConfig& cfg) {
    if (cfg.index_path.empty()) raise(Errc::bad_config, "index command requires an index path");
    auto ads = load_ads(cfg.ads_path);
    auto embedder = make_embedder(cfg.embedder, cfg.embed_max_in_flight);
    std::vector<std::string> texts;
    texts.reserve(ads.size());
    for (const auto& ad : ads) texts.push_back(ad_text(ad));
    auto embeddings = embedder->embed(texts);
    std::vector<std::pair<std::string, EmbeddingVector>> items;
    items.reserve(ads.size());
    for (std::size_t i = 0; i < ads.size(); ++i)
        items.emplace_back(ads[i].id, std::move(embeddings[i]));
    FlatIndex::build(std::move(items)).save(cfg.index_path);
    write_json_file(cfg.index_path + ".manifest.json", build_manifest(cfg, {cfg.ads_path}));
    std::cout << "indexed " << ads.size() << " ads -> " << cfg.index_path << "\n";
}

// ---- rewrite command --------------------------------------------------------------

struct RewriteRunStats {
    std::size_t written = 0;
    std::size_t reused = 0;
    std::size_t failed = 0;
};

/// Generate one rewrite per ad through the configured backend. Per-ad failures
/// become failure records (error + raw output), never abort the run. With
/// `resume`, ads that already have a successful pair are kept as-is and only
/// the missing ones run.
inline RewriteRunStats cmd_rewrite(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.rewrites_path.empty()) raise(Errc::bad_config, "rewrite requires a rewrites path");
    if (!is_rewrite_kind(cfg.strategy))
        raise(Errc::bad_config, "strategy must be a rewrite prompt kind");
    auto ads = load_ads(cfg.ads_path);
    auto backend = make_chat_backend(cfg.rewrite_llm);

    std::unordered_map<std::string, nlohmann::json> done;
    if (cfg.resume && std::filesystem::exists(cfg.rewrites_path)) {
        auto existing = load_rewrites(cfg.rewrites_path);
        for (const auto& pair : existing.pairs) done.emplace(pair.ad_id, rewrite_pair_to_json(pair));
    }

    RewriteRunStats stats;
    stats.reused = done.size();
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < ads.size(); ++i)
        if (done.find(ads[i].id) == done.end()) todo.push_back(i);

    std::vector<nlohmann::json> fresh(todo.size());
    std::atomic<std::size_t> failures{0};
    detail::parallel_for(todo.size(), cfg.workers, [&](std::size_t t) {
        const AdDocument& ad = ads[todo[t]];
        try {
            fresh[t] = rewrite_pair_to_json(rewrite(ad, cfg.strategy, *backend));
        } catch (const RewriteParseError& e) {
            fresh[t] = {{"ad_id", ad.id},
                        {"strategy", to_string(cfg.strategy)},
                        {"error", e.what()},
                        {"raw", e.raw()}};
            failures.fetch_add(1);
        } catch (const Error& e) {
            if (e.is_backend()) {
                fresh[t] = {{"ad_id", ad.id},
                            {"strategy", to_string(cfg.strategy)},
                            {"error", e.what()},
                            {"raw", ""}};
                failures.fetch_add(1);
            } else {
                throw;
            }
        }
    });
    for (std::size_t t = 0; t < todo.size(); ++t) done[ads[todo[t]].id] = std::move(fresh[t]);
    stats.failed = failures.load();
    stats.written = ads.size() - stats.failed;

    std::filesystem::path out_path(cfg.rewrites_path);
    if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
    std::ofstream out(cfg.rewrites_path, std::ios::trunc);
    if (!out) raise(Errc::bad_config, "cannot write '" + cfg.rewrites_path + "'");
    for (const auto& ad : ads) out << done.at(ad.id).dump() << "\n";

    std::cout << "rewrites: " << stats.written << " ok (" << stats.reused << " reused), "
              << stats.failed << " failed -> " << cfg.rewrites_path << "\n";
    return stats;
}

// ---- evaluate command ---------------------------------------------------------------

struct EvaluationResult {
    std::vector<MetricReport> rows;  // rewrite-file order, k ascending within an ad
    std::vector<AggregateSummary> per_k;
    RankLedger ledger;
    InclusionStore inclusions;
    std::vector<std::string> skipped_no_queries;
    std::size_t pairs_evaluated = 0;
    std::size_t rewrite_failures_skipped = 0;
};

namespace detail {

struct QueryCache {
    EmbeddingVector emb;
    std::vector<double> scores;    // aligned with index.doc_ids()
    std::vector<SearchHit> top;    // top (context_size + 1) hits
    std::set<std::string> before_cited;
};

// Full-corpus rank of a (score, id) candidate against cached per-query scores,
// skipping `self_pos` (the tracked document's slot). Matches FlatIndex::rank_of.
inline std::size_t rank_by_counting(const std::vector<double>& scores,
                                    const std::vector<std::string>& ids, std::size_t self_pos,
                                    double score, const std::string& doc_id) {
    std::size_t better = 0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
        if (j == self_pos) continue;
        if (scores[j] > score || (scores[j] == score && ids[j] < doc_id)) ++better;
    }
    return better + 1;
}

}  // namespace detail

/// Evaluate every rewrite pair: one-substitution ranks for both versions,
/// inclusion flags from the answering LLM over top-max(k_grid) contexts, then
/// ΔMRR / ΔDIR for every k in the grid.
inline EvaluationResult run_evaluate(const ExperimentConfig& cfg, const RunContext& ctx) {
    if (cfg.rewrites_path.empty()) raise(Errc::bad_config, "evaluate requires a rewrites path");
    auto rewrite_file = load_rewrites(cfg.rewrites_path);
    const std::size_t context_size = cfg.k_grid.back();
    if (context_size > ctx.index.size())
        raise(Errc::bad_config, "max k_grid entry " + std::to_string(context_size) +
                                    " exceeds corpus size " + std::to_string(ctx.index.size()));
    auto answer_backend = make_chat_backend(cfg.answer_llm);
    const std::vector<std::string>& index_ids = ctx.index.doc_ids();
    std::unordered_map<std::string, std::size_t> index_pos;
    for (std::size_t i = 0; i < index_ids.size(); ++i) index_pos.emplace(index_ids[i], i);

    EvaluationResult result;
    result.rewrite_failures_skipped = rewrite_file.failures.size();

    // keep only pairs with relevant queries; validate ids against the corpus
    std::vector<const RewritePair*> pairs;
    for (const auto& pair : rewrite_file.pairs) {
        if (ctx.ads_by_id.find(pair.ad_id) == ctx.ads_by_id.end())
            raise(Errc::unknown_doc, "rewrite references unknown ad '" + pair.ad_id + "'");
        auto rel = ctx.relevance.find(pair.ad_id);
        if (rel == ctx.relevance.end() || rel->second.empty()) {
            result.skipped_no_queries.push_back(pair.ad_id);
            continue;
        }
        pairs.push_back(&pair);
    }

    // stage A: per-query caches (embedding, score array, top hits, before answer)
    std::set<std::string> needed;
    for (const auto* pair : pairs)
        for (const auto& qid : ctx.relevance.at(pair->ad_id)) needed.insert(qid);
    std::vector<std::string> query_ids(needed.begin(), needed.end());
    std::vector<std::string> query_texts;
    query_texts.reserve(query_ids.size());
    for (const auto& qid : query_ids) {
        auto it = ctx.queries_by_id.find(qid);
        if (it == ctx.queries_by_id.end())
            raise(Errc::missing_field, "relevance references unknown query '" + qid + "'");
        query_texts.push_back(it->second.text);
    }
    auto query_embs = ctx.embedder->embed(query_texts);

    std::vector<detail::QueryCache> caches(query_ids.size());
    detail::parallel_for(query_ids.size(), cfg.workers, [&](std::size_t i) {
        detail::QueryCache& cache = caches[i];
        cache.emb = query_embs[i];
        cache.scores.resize(index_ids.size());
        for (std::size_t j = 0; j < index_ids.size(); ++j)
            cache.scores[j] = FlatIndex::dot(cache.emb, ctx.index.vector_at(j));
        cache.top = ctx.index.search(cache.emb, std::min(context_size + 1, ctx.index.size()));
        std::vector<AdDocument> context;
        for (std::size_t h = 0; h < std::min(context_size, cache.top.size()); ++h)
            context.push_back(*ctx.ads_by_id.at(cache.top[h].doc_id));
        cache.before_cited =
            answer_with_ads(ctx.queries_by_id.at(query_ids[i]), context, *answer_backend).cited_ids;
    });
    std::unordered_map<std::string, std::size_t> cache_pos;
    for (std::size_t i = 0; i < query_ids.size(); ++i) cache_pos.emplace(query_ids[i], i);

    // stage B: per-pair evaluation
    std::vector<std::string> after_texts;
    after_texts.reserve(pairs.size());
    for (const auto* pair : pairs) after_texts.push_back(ad_text(pair->after));
    auto after_embs = ctx.embedder->embed(after_texts);

    struct QueryOutcome {
        std::string query_id;
        std::size_t rank_before = 0;
        std::size_t rank_after = 0;
        bool included_before = false;
        bool included_after = false;
    };
    std::vector<std::vector<QueryOutcome>> outcomes(pairs.size());

    detail::parallel_for(pairs.size(), cfg.workers, [&](std::size_t p) {
        const RewritePair& pair = *pairs[p];
        const std::size_t self_pos = index_pos.at(pair.ad_id);
        for (const auto& qid : ctx.relevance.at(pair.ad_id)) {
            const detail::QueryCache& cache = caches[cache_pos.at(qid)];
            QueryOutcome outcome;
            outcome.query_id = qid;
            const double score_before = cache.scores[self_pos];
            const double score_after = FlatIndex::dot(cache.emb, after_embs[p]);
            outcome.rank_before = detail::rank_by_counting(cache.scores, index_ids, self_pos,
                                                           score_before, pair.ad_id);
            outcome.rank_after = detail::rank_by_counting(cache.scores, index_ids, self_pos,
                                                          score_after, pair.ad_id);
            outcome.included_before = cache.before_cited.count(pair.ad_id) != 0;

            // after-context: original relative order is unchanged, only the
            // tracked ad moves, so splice it into the cached top list
            std::vector<const SearchHit*> others;
            for (const auto& hit : cache.top)
                if (hit.doc_id != pair.ad_id) others.push_back(&hit);
            if (others.size() > context_size) others.resize(context_size);
            std::vector<AdDocument> context;
            context.reserve(context_size);
            AdDocument substituted = pair.after;
            bool inserted = false;
            for (const auto* hit : others) {
                if (!inserted && (score_after > hit->score ||
                                  (score_after == hit->score && pair.ad_id < hit->doc_id))) {
                    context.push_back(substituted);
                    inserted = true;
                }
                if (context.size() == context_size) break;
                context.push_back(*ctx.ads_by_id.at(hit->doc_id));
                if (context.size() == context_size) break;
            }
            if (!inserted && context.size() < context_size) context.push_back(substituted);
            auto cited =
                answer_with_ads(ctx.queries_by_id.at(qid), context, *answer_backend).cited_ids;
            outcome.included_after = cited.count(pair.ad_id) != 0;
            outcomes[p].push_back(std::move(outcome));
        }
    });

    // merge sequentially in pair order
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const RewritePair& pair = *pairs[p];
        for (const auto& outcome : outcomes[p]) {
            result.ledger.set(pair.ad_id, outcome.query_id, Version::before, outcome.rank_before);
            result.ledger.set(pair.ad_id, outcome.query_id, Version::after, outcome.rank_after);
            result.inclusions.set(pair.ad_id, outcome.query_id, Version::before,
                                  outcome.included_before);
            result.inclusions.set(pair.ad_id, outcome.query_id, Version::after,
                                  outcome.included_after);
        }
        const auto& q_ids = ctx.relevance.at(pair.ad_id);
        for (const std::size_t k : cfg.k_grid) {
            MetricReport report;
            report.ad_id = pair.ad_id;
            report.k = k;
            report.delta_mrr = delta_mrr_at_k(result.ledger, pair.ad_id, q_ids, k);
            auto eligible = eligible_queries(result.ledger, pair.ad_id, q_ids, k);
            report.eligible_query_count = eligible.size();
            report.delta_dir_pp = delta_dir_at_k(result.inclusions, eligible, pair.ad_id);
            result.rows.push_back(std::move(report));
        }
    }
    result.pairs_evaluated = pairs.size();

    for (const std::size_t k : cfg.k_grid) {
        std::vector<MetricReport> at_k;
        for (const auto& row : result.rows)
            if (row.k == k) at_k.push_back(row);
        result.per_k.push_back(aggregate(at_k));
    }
    return result;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricReport>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) raise(Errc::bad_config, "cannot write '" + path + "'");
    out << "ad_id,k,delta_mrr,delta_dir_pp,eligible_count\n";
    for (const auto& row : rows) {
        detail::check_csv_safe(row.ad_id);
        out << row.ad_id << "," << row.k << "," << detail::format_double(row.delta_mrr) << ","
            << (row.delta_dir_pp ? detail::format_double(*row.delta_dir_pp) : "") << ","
            << row.eligible_query_count << "\n";
    }
}

inline nlohmann::json summary_to_json(const EvaluationResult& result) {
    nlohmann::json per_k = nlohmann::json::array();
    for (const auto& agg : result.per_k) {
        nlohmann::json entry{{"k", agg.k},
                             {"ad_count", agg.ad_count},
                             {"mean_delta_mrr", agg.mean_delta_mrr},
                             {"dir_absent_count", agg.dir_absent_count}};
        if (agg.mean_delta_dir_pp)
            entry["mean_delta_dir_pp"] = *agg.mean_delta_dir_pp;
        else
            entry["mean_delta_dir_pp"] = nullptr;
        per_k.push_back(entry);
    }
    return {{"pairs_evaluated", result.pairs_evaluated},
            {"skipped_no_queries", result.skipped_no_queries},
            {"rewrite_failures_skipped", result.rewrite_failures_skipped},
            {"per_k", per_k}};
}

/// Full evaluate command: run, then emit metrics.csv, summary.json and the
/// manifest into the reports directory.
inline EvaluationResult cmd_evaluate(const ExperimentConfig& cfg) {
    auto ctx = prepare_context(cfg);
    auto result = run_evaluate(cfg, ctx);
    std::filesystem::create_directories(cfg.reports_dir);
    write_metrics_csv(cfg.reports_dir + "/metrics.csv", result.rows);
    write_json_file(cfg.reports_dir + "/summary.json", summary_to_json(result));
    write_json_file(cfg.reports_dir + "/manifest.json",
                    build_manifest(cfg, {cfg.ads_path, cfg.queries_path, cfg.rewrites_path}));
    std::cout << "evaluated " << result.pairs_evaluated << " rewrites ("
              << result.skipped_no_queries.size() << " skipped without queries) -> "
              << cfg.reports_dir << "\n";
    return result;
}

}  // namespace rrb
