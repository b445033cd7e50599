#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "rrb/common.hpp"

namespace rrb {

enum class Version { before, after };

inline const char* to_string(Version v) { return v == Version::before ? "before" : "after"; }

/// Full-corpus retrieval rank per (ad, query, version). One retrieval pass
/// fills the ledger; every k in the ablation grid reads from it.
class RankLedger {
public:
    void set(const std::string& ad_id, const std::string& query_id, Version v, std::size_t rank) {
        entries_[key(ad_id, query_id, v)] = rank;
    }

    std::size_t rank(const std::string& ad_id, const std::string& query_id, Version v) const {
        auto it = entries_.find(key(ad_id, query_id, v));
        if (it == entries_.end())
            raise(Errc::missing_ledger_entry, "no rank for (" + ad_id + ", " + query_id + ", " +
                                                  to_string(v) + ")");
        return it->second;
    }

    std::size_t size() const noexcept { return entries_.size(); }

private:
    using Key = std::tuple<std::string, std::string, int>;
    static Key key(const std::string& a, const std::string& q, Version v) {
        return {a, q, static_cast<int>(v)};
    }
    std::map<Key, std::size_t> entries_;
};

/// Binary citation flags: did the answering LLM use the ad for the query.
class InclusionStore {
public:
    void set(const std::string& ad_id, const std::string& query_id, Version v, bool included) {
        entries_[key(ad_id, query_id, v)] = included;
    }

    bool included(const std::string& ad_id, const std::string& query_id, Version v) const {
        auto it = entries_.find(key(ad_id, query_id, v));
        if (it == entries_.end())
            raise(Errc::missing_inclusion, "no inclusion flag for (" + ad_id + ", " + query_id +
                                               ", " + to_string(v) + ")");
        return it->second;
    }

private:
    using Key = std::tuple<std::string, std::string, int>;
    static Key key(const std::string& a, const std::string& q, Version v) {
        return {a, q, static_cast<int>(v)};
    }
    std::map<Key, bool> entries_;
};

struct MetricReport {
    std::string ad_id;
    std::size_t k = 0;
    double delta_mrr = 0.0;
    std::optional<double> delta_dir_pp;  // absent when no query is eligible
    std::size_t eligible_query_count = 0;
};

/// Reciprocal rank with cutoff: 1/rank when rank <= K, else 0.
inline double rr_at_k(std::size_t rank, std::size_t K) {
    if (rank < 1 || K < 1) raise(Errc::bad_config, "rr_at_k: rank and K must be >= 1");
    return rank <= K ? 1.0 / static_cast<double>(rank) : 0.0;
}

/// Mean over Q_d of RR_K(after) - RR_K(before).
inline double delta_mrr_at_k(const RankLedger& ledger, const std::string& ad_id,
                             const std::vector<std::string>& query_ids, std::size_t K) {
    if (query_ids.empty()) raise(Errc::empty_query_set, "delta_mrr_at_k: empty query set");
    double sum = 0.0;
    for (const auto& qid : query_ids) {
        sum += rr_at_k(ledger.rank(ad_id, qid, Version::after), K) -
               rr_at_k(ledger.rank(ad_id, qid, Version::before), K);
    }
    return sum / static_cast<double>(query_ids.size());
}

/// Q_d^(K): the queries where the ad ranks within K both before and after.
inline std::vector<std::string> eligible_queries(const RankLedger& ledger,
                                                 const std::string& ad_id,
                                                 const std::vector<std::string>& query_ids,
                                                 std::size_t K) {
    std::vector<std::string> eligible;
    for (const auto& qid : query_ids) {
        if (ledger.rank(ad_id, qid, Version::before) <= K &&
            ledger.rank(ad_id, qid, Version::after) <= K)
            eligible.push_back(qid);
    }
    return eligible;
}

/// Percentage-point lift of the inclusion rate over the eligible queries.
/// Absent (not zero) when no query is eligible.
inline std::optional<double> delta_dir_at_k(const InclusionStore& inclusions,
                                            const std::vector<std::string>& eligible,
                                            const std::string& ad_id) {
    if (eligible.empty()) return std::nullopt;
    double after = 0.0;
    double before = 0.0;
    for (const auto& qid : eligible) {
        after += inclusions.included(ad_id, qid, Version::after) ? 1.0 : 0.0;
        before += inclusions.included(ad_id, qid, Version::before) ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(eligible.size());
    return 100.0 * (after / n - before / n);
}

struct AggregateSummary {
    std::size_t k = 0;
    std::size_t ad_count = 0;
    double mean_delta_mrr = 0.0;
    std::optional<double> mean_delta_dir_pp;  // over ads where it is present
    std::size_t dir_absent_count = 0;
};

/// Unweighted per-ad mean for one k. ΔDIR averages only over ads where it is
/// present; the absent count is reported alongside.
inline AggregateSummary aggregate(const std::vector<MetricReport>& reports) {
    AggregateSummary summary;
    if (reports.empty()) return summary;
    summary.k = reports.front().k;
    double mrr_sum = 0.0;
    double dir_sum = 0.0;
    std::size_t dir_count = 0;
    for (const auto& r : reports) {
        if (r.k != summary.k)
            raise(Errc::bad_config, "aggregate: mixed k values (" + std::to_string(summary.k) +
                                        " and " + std::to_string(r.k) + ")");
        mrr_sum += r.delta_mrr;
        if (r.delta_dir_pp.has_value()) {
            dir_sum += *r.delta_dir_pp;
            ++dir_count;
        } else {
            ++summary.dir_absent_count;
        }
    }
    summary.ad_count = reports.size();
    summary.mean_delta_mrr = mrr_sum / static_cast<double>(reports.size());
    if (dir_count > 0) summary.mean_delta_dir_pp = dir_sum / static_cast<double>(dir_count);
    return summary;
}

}  // namespace rrb
