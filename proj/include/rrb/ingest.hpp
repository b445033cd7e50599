#pragma once

#include <iostream>
#include <string>
#include <vector>

#include "rrb/pipeline.hpp"

namespace rrb {

struct IngestStats {
    std::size_t ad_count = 0;
    std::size_t query_count = 0;
    std::size_t pair_count = 0;
    std::size_t ads_without_queries = 0;
};

namespace detail {

inline std::string slug(const std::string& s) {
    std::string out;
    for (unsigned char c : s)
        out.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c)) : '_');
    return out;
}

// Strip "1." / "-" style list bullets from a generated line.
inline std::string strip_bullet(std::string line) {
    line = trim(line);
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) return trim(line.substr(i + 1));
    if (!line.empty() && (line[0] == '-' || line[0] == '*')) return trim(line.substr(1));
    return line;
}

}  // namespace detail

/// Generate `per_pair` queries for every (domain, subdomain) pair present in
/// the ads via the configured chat backend and write them as queries.jsonl.
/// Needs a remote backend; the mock backends have no meaningful output here.
inline std::size_t generate_queries(const ExperimentConfig& cfg,
                                    const std::vector<AdDocument>& ads, std::size_t per_pair) {
    if (cfg.rewrite_llm.kind != LlmKind::remote_chat)
        raise(Errc::bad_config, "query generation requires a remote-chat backend");
    if (cfg.queries_path.empty()) raise(Errc::bad_config, "query generation needs a queries path");
    auto backend = make_chat_backend(cfg.rewrite_llm);

    std::vector<std::pair<std::string, std::string>> pairs;
    std::set<std::string> seen;
    for (const auto& ad : ads)
        if (seen.insert(detail::label_key(ad.domain, ad.subdomain)).second)
            pairs.emplace_back(ad.domain, ad.subdomain);

    std::ofstream out(cfg.queries_path, std::ios::trunc);
    if (!out) raise(Errc::bad_config, "cannot write '" + cfg.queries_path + "'");
    std::size_t written = 0;
    for (const auto& [domain, subdomain] : pairs) {
        const std::string prompt =
            "Generate " + std::to_string(per_pair) +
            " distinct short user search queries for products in the category below. Respond "
            "with one query per line and no extra text.\n\nDomain: " +
            domain + "\nSubdomain: " + subdomain;
        const std::string raw = backend->complete(prompt);
        std::size_t count = 0;
        for (const auto& line : split(raw, '\n')) {
            const std::string text = detail::strip_bullet(line);
            if (text.empty()) continue;
            if (count == per_pair) break;
            ++count;
            nlohmann::json q{{"id", "q_" + detail::slug(domain) + "_" + detail::slug(subdomain) +
                                        "_" + std::to_string(count)},
                             {"text", text},
                             {"domain", domain},
                             {"subdomain", subdomain}};
            out << q.dump() << "\n";
            ++written;
        }
    }
    return written;
}

/// Validate the input corpora, report relevance coverage, and write a
/// manifest. With `generate_per_pair` > 0, queries are generated first.
inline IngestStats cmd_ingest(const ExperimentConfig& cfg, std::size_t generate_per_pair = 0) {
    auto ads = load_ads(cfg.ads_path);
    if (generate_per_pair > 0) {
        const std::size_t n = generate_queries(cfg, ads, generate_per_pair);
        std::cout << "generated " << n << " queries -> " << cfg.queries_path << "\n";
    }
    std::vector<Query> queries;
    if (!cfg.queries_path.empty() && std::filesystem::exists(cfg.queries_path))
        queries = load_queries(cfg.queries_path);

    auto relevance = build_relevance(ads, queries);
    IngestStats stats;
    stats.ad_count = ads.size();
    stats.query_count = queries.size();
    std::set<std::string> pairs;
    for (const auto& ad : ads) pairs.insert(detail::label_key(ad.domain, ad.subdomain));
    stats.pair_count = pairs.size();
    for (const auto& [ad_id, qids] : relevance)
        if (qids.empty()) ++stats.ads_without_queries;

    std::cout << "ads: " << stats.ad_count << "\nqueries: " << stats.query_count
              << "\ndomain/subdomain pairs: " << stats.pair_count
              << "\nads without relevant queries: " << stats.ads_without_queries << "\n";
    std::filesystem::create_directories(cfg.reports_dir);
    write_json_file(cfg.reports_dir + "/manifest.json",
                    build_manifest(cfg, {cfg.ads_path, cfg.queries_path}));
    return stats;
}

}  // namespace rrb
