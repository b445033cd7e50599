#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrb/common.hpp"
#include "rrb/corpus.hpp"
#include "rrb/embedding.hpp"
#include "rrb/vector_index.hpp"

namespace rrb {

struct LossWeights {
    double alpha = 1.0;  // relevance gain
    double beta = 1.0;   // triplet
    double gamma = 1.0;  // content fidelity

    void validate() const {
        if (alpha < 0 || beta < 0 || gamma < 0)
            raise(Errc::bad_config, "loss weights must be non-negative");
        if (alpha == 0 && beta == 0 && gamma == 0)
            raise(Errc::bad_config, "at least one loss weight must be positive");
    }
};

/// The three distractors drawn for one query, with their query similarities.
struct DistractorSample {
    std::string query_id;
    std::array<std::string, 3> doc_ids;
    std::array<double, 3> similarities;

    double mean_similarity() const {
        return (similarities[0] + similarities[1] + similarities[2]) / 3.0;
    }
};

struct LossBreakdown {
    double rel_gain = 0.0;
    double triplet = 0.0;
    double fidelity = 0.0;
    double total = 0.0;
    LossWeights weights;
};

/// Penalty for losing query similarity: sim_before - sim_after. Negative when
/// the rewrite moved the ad closer to the query.
inline double rel_gain_loss(double sim_after, double sim_before) {
    return sim_before - sim_after;
}

/// Penalty for trailing the competition: mean distractor similarity minus the
/// rewrite's own similarity to the query.
inline double triplet_loss(double sim_after, const DistractorSample& sample) {
    return sample.mean_similarity() - sim_after;
}

/// Penalty for semantic drift between rewrite and original: 1 - sim.
inline double fidelity_loss(double sim_after_before) { return 1.0 - sim_after_before; }

namespace detail {

// Unbiased bounded draw via rejection; mt19937_64 output is specified by the
// standard, so draws reproduce across platforms (uniform_int_distribution
// would not).
inline std::uint64_t bounded_uint(std::mt19937_64& gen, std::uint64_t n) {
    const std::uint64_t threshold = (0ull - n) % n;
    while (true) {
        const std::uint64_t r = gen();
        if (r >= threshold) return r % n;
    }
}

inline std::uint64_t mix_seed(std::uint64_t seed, const std::string& query_id) {
    return splitmix64(seed ^ fnv1a64(query_id));
}

}  // namespace detail

/// Draw 3 distinct distractors uniformly from the query's top-k hits, never
/// including the tracked document. The RNG stream is keyed on (seed, query_id)
/// so a given work item reproduces regardless of evaluation order.
inline DistractorSample sample_distractors(const FlatIndex& index,
                                           const EmbeddingVector& query_emb,
                                           const std::string& query_id,
                                           const std::string& tracked_doc_id, std::size_t k,
                                           std::uint64_t seed) {
    if (k < 1) raise(Errc::bad_config, "sample_distractors: k must be >= 1");
    auto hits = index.search(query_emb, k);
    std::vector<std::string> eligible;
    eligible.reserve(hits.size());
    for (auto& hit : hits)
        if (hit.doc_id != tracked_doc_id) eligible.push_back(std::move(hit.doc_id));
    if (eligible.size() < 3)
        raise(Errc::insufficient_candidates,
              "query '" + query_id + "': only " + std::to_string(eligible.size()) +
                  " distractor candidates in top-" + std::to_string(k));

    std::mt19937_64 gen(detail::mix_seed(seed, query_id));
    DistractorSample sample;
    sample.query_id = query_id;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t j = i + detail::bounded_uint(gen, eligible.size() - i);
        std::swap(eligible[i], eligible[j]);
        sample.doc_ids[i] = eligible[i];
        sample.similarities[i] = cosine_sim(query_emb, index.vector_of(eligible[i]));
    }
    return sample;
}

/// Composite loss for one (rewrite, query) work item. Embeds the query and
/// both ad versions, then combines the three terms under `weights`.
inline LossBreakdown total_loss(const RewritePair& pair, const Query& query,
                                const FlatIndex& index, Embedder& embedder,
                                const LossWeights& weights, std::size_t k, std::uint64_t seed) {
    weights.validate();
    auto embeddings = embedder.embed({query.text, ad_text(pair.before), ad_text(pair.after)});
    const EmbeddingVector& query_emb = embeddings[0];
    const EmbeddingVector& before_emb = embeddings[1];
    const EmbeddingVector& after_emb = embeddings[2];

    const double sim_after = cosine_sim(query_emb, after_emb);
    const double sim_before = cosine_sim(query_emb, before_emb);
    const double sim_after_before = cosine_sim(after_emb, before_emb);

    LossBreakdown breakdown;
    breakdown.weights = weights;
    breakdown.rel_gain = rel_gain_loss(sim_after, sim_before);
    breakdown.triplet =
        triplet_loss(sim_after, sample_distractors(index, query_emb, query.id, pair.ad_id, k, seed));
    breakdown.fidelity = fidelity_loss(sim_after_before);
    breakdown.total = weights.alpha * breakdown.rel_gain + weights.beta * breakdown.triplet +
                      weights.gamma * breakdown.fidelity;
    return breakdown;
}

inline std::unordered_map<std::string, Query> index_queries(const std::vector<Query>& queries) {
    std::unordered_map<std::string, Query> by_id;
    by_id.reserve(queries.size());
    for (const auto& q : queries) by_id.emplace(q.id, q);
    return by_id;
}

struct RewardResult {
    double reward = 0.0;
    std::vector<LossBreakdown> per_query;       // aligned with selected_query_ids
    std::vector<std::string> selected_query_ids;
};

/// The RL reward: negative mean composite loss over the first
/// min(3, |Q_d|) relevant query ids in ascending order.
inline RewardResult reward(const RewritePair& pair, const RelevanceMap& relevance,
                           const std::unordered_map<std::string, Query>& queries_by_id,
                           const FlatIndex& index, Embedder& embedder,
                           const LossWeights& weights, std::size_t k, std::uint64_t seed) {
    auto it = relevance.find(pair.ad_id);
    if (it == relevance.end() || it->second.empty())
        raise(Errc::no_relevant_queries, "ad '" + pair.ad_id + "' has no relevant queries");
    std::vector<std::string> selected = it->second;
    std::sort(selected.begin(), selected.end());
    selected.erase(std::unique(selected.begin(), selected.end()), selected.end());
    if (selected.size() > 3) selected.resize(3);

    RewardResult result;
    double sum = 0.0;
    for (const auto& qid : selected) {
        auto qit = queries_by_id.find(qid);
        if (qit == queries_by_id.end())
            raise(Errc::missing_field, "relevance map references unknown query '" + qid + "'");
        auto breakdown = total_loss(pair, qit->second, index, embedder, weights, k, seed);
        sum += breakdown.total;
        result.per_query.push_back(breakdown);
        result.selected_query_ids.push_back(qid);
    }
    result.reward = -sum / static_cast<double>(selected.size());
    return result;
}

}  // namespace rrb
