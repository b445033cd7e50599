#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "rrb/common.hpp"

namespace rrb {

struct AdDocument {
    std::string id;
    std::string title;
    std::string description;
    std::string domain;
    std::string subdomain;
};

struct Query {
    std::string id;
    std::string text;
    std::string domain;
    std::string subdomain;
};

struct RewritePair {
    std::string ad_id;
    AdDocument before;
    AdDocument after;
    std::string strategy;
};

/// ad id -> ids of queries sharing the ad's (domain, subdomain), sorted
/// ascending. Ads with no matching query map to an empty list.
using RelevanceMap = std::map<std::string, std::vector<std::string>>;

/// Canonical text fed to the embedder for a document.
inline std::string ad_text(const AdDocument& d) {
    return "Title: " + d.title + "\nDescription: " + d.description;
}

namespace detail {

inline std::string require_string(const nlohmann::json& obj, const char* key, int line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string())
        raise(Errc::missing_field,
              "line " + std::to_string(line) + ": missing field '" + std::string(key) + "'");
    return it->get<std::string>();
}

// Labels are joined after trim + case-fold; LLM-produced labels vary in case.
inline std::string label_key(const std::string& domain, const std::string& subdomain) {
    return to_lower(trim(domain)) + "\x1f" + to_lower(trim(subdomain));
}

template <typename Record, typename FromJson>
std::vector<Record> load_jsonl(const std::string& path, FromJson from_json) {
    std::ifstream in(path);
    if (!in) raise(Errc::missing_field, "cannot open '" + path + "'");
    std::vector<Record> records;
    std::unordered_set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object())
            raise(Errc::parse_error, "'" + path + "' line " + std::to_string(line_no) +
                                         ": invalid JSON object");
        Record rec = from_json(obj, line_no);
        if (!seen.insert(rec.id).second)
            raise(Errc::duplicate_id, "'" + path + "' line " + std::to_string(line_no) +
                                          ": duplicate id '" + rec.id + "'");
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace detail

/// Load ads from a JSONL file (one object per line, extra keys ignored).
/// Iteration order is file order.
inline std::vector<AdDocument> load_ads(const std::string& path) {
    return detail::load_jsonl<AdDocument>(path, [](const nlohmann::json& obj, int line) {
        AdDocument ad;
        ad.id = detail::require_string(obj, "id", line);
        ad.title = detail::require_string(obj, "title", line);
        ad.description = detail::require_string(obj, "description", line);
        ad.domain = detail::require_string(obj, "domain", line);
        ad.subdomain = detail::require_string(obj, "subdomain", line);
        if (trim(ad.title).empty() || trim(ad.description).empty())
            raise(Errc::missing_field,
                  "line " + std::to_string(line) + ": empty title or description");
        return ad;
    });
}

inline std::vector<Query> load_queries(const std::string& path) {
    auto queries = detail::load_jsonl<Query>(path, [](const nlohmann::json& obj, int line) {
        Query q;
        q.id = detail::require_string(obj, "id", line);
        q.text = detail::require_string(obj, "text", line);
        q.domain = detail::require_string(obj, "domain", line);
        q.subdomain = detail::require_string(obj, "subdomain", line);
        if (trim(q.text).empty())
            raise(Errc::missing_field, "line " + std::to_string(line) + ": empty query text");
        return q;
    });
    if (queries.empty()) std::cerr << "warning: query file '" << path << "' is empty\n";
    return queries;
}

/// Exact (domain, subdomain) join: q is relevant to d iff the labels match
/// after trim + case-fold. Every ad appears in the result, possibly empty.
inline RelevanceMap build_relevance(const std::vector<AdDocument>& ads,
                                    const std::vector<Query>& queries) {
    std::unordered_map<std::string, std::vector<std::string>> by_pair;
    for (const auto& q : queries) by_pair[detail::label_key(q.domain, q.subdomain)].push_back(q.id);
    for (auto& [pair, ids] : by_pair) std::sort(ids.begin(), ids.end());
    RelevanceMap map;
    for (const auto& ad : ads) {
        auto it = by_pair.find(detail::label_key(ad.domain, ad.subdomain));
        map[ad.id] = it == by_pair.end() ? std::vector<std::string>{} : it->second;
    }
    return map;
}

// ---- rewrites.jsonl ---------------------------------------------------------
// Successful pair:  {"ad_id","strategy","domain","subdomain",
//                    "before":{"title","description"},"after":{...}}
// Failure record:   {"ad_id","strategy","error","raw"}

struct RewriteFailure {
    std::string ad_id;
    std::string strategy;
    std::string error;
    std::string raw;
};

struct RewriteFile {
    std::vector<RewritePair> pairs;
    std::vector<RewriteFailure> failures;
};

inline nlohmann::json rewrite_pair_to_json(const RewritePair& pair) {
    return nlohmann::json{
        {"ad_id", pair.ad_id},
        {"strategy", pair.strategy},
        {"domain", pair.before.domain},
        {"subdomain", pair.before.subdomain},
        {"before", {{"title", pair.before.title}, {"description", pair.before.description}}},
        {"after", {{"title", pair.after.title}, {"description", pair.after.description}}},
    };
}

inline RewriteFile load_rewrites(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::missing_field, "cannot open '" + path + "'");
    RewriteFile file;
    std::unordered_set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto obj = nlohmann::json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object())
            raise(Errc::parse_error,
                  "'" + path + "' line " + std::to_string(line_no) + ": invalid JSON object");
        const std::string ad_id = detail::require_string(obj, "ad_id", line_no);
        if (!seen.insert(ad_id).second)
            raise(Errc::duplicate_id, "'" + path + "' line " + std::to_string(line_no) +
                                          ": duplicate ad_id '" + ad_id + "'");
        const std::string strategy = obj.value("strategy", "");
        if (obj.contains("error")) {
            file.failures.push_back(
                {ad_id, strategy, obj.value("error", ""), obj.value("raw", "")});
            continue;
        }
        if (!obj.contains("before") || !obj.contains("after"))
            raise(Errc::missing_field, "'" + path + "' line " + std::to_string(line_no) +
                                           ": missing before/after");
        RewritePair pair;
        pair.ad_id = ad_id;
        pair.strategy = strategy;
        const std::string domain = obj.value("domain", "");
        const std::string subdomain = obj.value("subdomain", "");
        pair.before = {ad_id, detail::require_string(obj["before"], "title", line_no),
                       detail::require_string(obj["before"], "description", line_no), domain,
                       subdomain};
        pair.after = {ad_id, detail::require_string(obj["after"], "title", line_no),
                      detail::require_string(obj["after"], "description", line_no), domain,
                      subdomain};
        file.pairs.push_back(std::move(pair));
    }
    return file;
}

}  // namespace rrb
