#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <semaphore>
#include <string>
#include <vector>

#include "rrb/common.hpp"
#include "rrb/http.hpp"

namespace rrb {

/// Unit-length float vector. All similarity math in the project goes through
/// these, so cosine similarity reduces to an inner product.
struct EmbeddingVector {
    std::vector<float> values;

    std::size_t dim() const noexcept { return values.size(); }

    bool operator==(const EmbeddingVector& other) const { return values == other.values; }
};

constexpr std::size_t kDefaultEmbeddingDim = 384;
constexpr std::size_t kDefaultEmbedBatchSize = 64;

enum class EmbedderKind { remote_service, deterministic_test };

struct EmbedderDescriptor {
    EmbedderKind kind = EmbedderKind::deterministic_test;
    std::size_t dim = kDefaultEmbeddingDim;
    std::string endpoint;    // required for remote_service
    std::string model_name;  // informational
    std::size_t batch_size = kDefaultEmbedBatchSize;
};

/// Scale `raw` to unit L2 norm. A vector whose norm is already within 1e-6 of
/// one is returned unchanged, which makes normalization bitwise idempotent.
inline EmbeddingVector normalize(const std::vector<float>& raw) {
    if (raw.empty()) raise(Errc::zero_vector, "normalize: empty vector");
    double sq = 0.0;
    for (float v : raw) {
        if (!std::isfinite(v)) raise(Errc::non_finite, "normalize: non-finite entry");
        sq += static_cast<double>(v) * static_cast<double>(v);
    }
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) raise(Errc::zero_vector, "normalize: zero-length vector");
    if (std::abs(norm - 1.0) <= 1e-6) return EmbeddingVector{raw};
    EmbeddingVector out;
    out.values.reserve(raw.size());
    for (float v : raw) out.values.push_back(static_cast<float>(static_cast<double>(v) / norm));
    return out;
}

/// Sequential inner product, accumulated in double. Identical inputs short-
/// circuit to exactly 1 so that identity rewrites cost exactly zero fidelity.
inline double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        raise(Errc::dim_mismatch, "cosine_sim: dims " + std::to_string(a.dim()) + " vs " +
                                      std::to_string(b.dim()));
    if (a.values == b.values) return 1.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        acc += static_cast<double>(a.values[i]) * static_cast<double>(b.values[i]);
    if (acc > 1.0) return 1.0;
    if (acc < -1.0) return -1.0;
    return acc;
}

class Embedder {
public:
    virtual ~Embedder() = default;

    /// One normalized vector per input text, order preserved. Implementations
    /// must be safe for concurrent callers.
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;

    virtual std::size_t dim() const = 0;

    EmbeddingVector embed_one(const std::string& text) { return embed({text}).front(); }
};

/// Hashed bag-of-tokens embedder: lowercase, split on non-alphanumerics, each
/// token lands on hash(token) % dim with a sign bit from a second hash.
/// Pure and stable across runs, processes and platforms, so every test in the
/// project can rely on it as a reproducible stand-in for a sentence encoder.
class DeterministicEmbedder final : public Embedder {
public:
    explicit DeterministicEmbedder(std::size_t dim = kDefaultEmbeddingDim) : dim_(dim) {
        if (dim_ == 0) raise(Errc::bad_config, "embedder dim must be positive");
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (const auto& text : texts) out.push_back(embed_text(text));
        return out;
    }

    std::size_t dim() const override { return dim_; }

private:
    EmbeddingVector embed_text(const std::string& text) const {
        std::vector<float> acc(dim_, 0.0f);
        auto tokens = tokenize(text);
        if (tokens.empty()) tokens.push_back(text);  // degenerate text: hash it whole
        for (const auto& tok : tokens) {
            const std::uint64_t h = fnv1a64(tok);
            const std::size_t idx = static_cast<std::size_t>(h % dim_);
            const float sign = (splitmix64(h) & 1u) != 0 ? 1.0f : -1.0f;
            acc[idx] += sign;
        }
        double sq = 0.0;
        for (float v : acc) sq += static_cast<double>(v) * static_cast<double>(v);
        if (sq == 0.0) {
            // token signs cancelled; fall back to a single deterministic axis
            acc[static_cast<std::size_t>(fnv1a64(text) % dim_)] = 1.0f;
        }
        return normalize(acc);
    }

    std::size_t dim_;
};

/// HTTP embedding client. POST {"texts":[...]} -> {"vectors":[[...],...]}.
/// Inputs are chunked into batches of `batch_size`; service output is
/// re-normalized since it is not trusted to be unit length.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(EmbedderDescriptor desc, int retries = 3,
                            std::size_t max_in_flight = 8)
        : desc_(std::move(desc)), retries_(retries),
          in_flight_(static_cast<std::ptrdiff_t>(max_in_flight)) {
        if (auto url = http::env_var("RRB_EMBED_URL")) desc_.endpoint = *url;
        if (desc_.endpoint.empty())
            raise(Errc::bad_config, "remote embedder requires an endpoint");
        if (desc_.batch_size == 0) raise(Errc::bad_config, "batch_size must be >= 1");
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        std::vector<EmbeddingVector> out;
        out.reserve(texts.size());
        for (std::size_t start = 0; start < texts.size(); start += desc_.batch_size) {
            const std::size_t end = std::min(start + desc_.batch_size, texts.size());
            std::vector<std::string> chunk(texts.begin() + static_cast<std::ptrdiff_t>(start),
                                           texts.begin() + static_cast<std::ptrdiff_t>(end));
            auto vectors = request_chunk(chunk);
            for (auto& v : vectors) out.push_back(std::move(v));
        }
        return out;
    }

    std::size_t dim() const override { return desc_.dim; }

private:
    std::vector<EmbeddingVector> request_chunk(const std::vector<std::string>& chunk) {
        in_flight_.acquire();
        struct Release {
            std::counting_semaphore<4096>& sem;
            ~Release() { sem.release(); }
        } release{in_flight_};

        nlohmann::json body;
        body["texts"] = chunk;
        auto reply = http::post_json(desc_.endpoint, body, retries_);
        if (!reply.contains("vectors") || !reply["vectors"].is_array() ||
            reply["vectors"].size() != chunk.size())
            raise(Errc::transport_error, "embedding service returned " +
                                             std::to_string(reply.value("vectors", nlohmann::json::array()).size()) +
                                             " vectors for " + std::to_string(chunk.size()) + " texts");
        std::vector<EmbeddingVector> out;
        out.reserve(chunk.size());
        for (const auto& row : reply["vectors"]) {
            std::vector<float> raw;
            raw.reserve(desc_.dim);
            for (const auto& v : row) raw.push_back(v.get<float>());
            if (raw.size() != desc_.dim)
                raise(Errc::dim_mismatch, "embedding service returned width " +
                                              std::to_string(raw.size()) + ", expected " +
                                              std::to_string(desc_.dim));
            out.push_back(normalize(raw));
        }
        return out;
    }

    EmbedderDescriptor desc_;
    int retries_;
    std::counting_semaphore<4096> in_flight_;
};

inline std::shared_ptr<Embedder> make_embedder(const EmbedderDescriptor& desc,
                                               std::size_t max_in_flight = 8) {
    switch (desc.kind) {
        case EmbedderKind::deterministic_test:
            return std::make_shared<DeterministicEmbedder>(desc.dim);
        case EmbedderKind::remote_service:
            return std::make_shared<RemoteEmbedder>(desc, 3, max_in_flight);
    }
    raise(Errc::bad_config, "unknown embedder kind");
}

}  // namespace rrb
