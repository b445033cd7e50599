#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rrb/common.hpp"
#include "rrb/embedding.hpp"

namespace rrb {

struct SearchHit {
    std::string doc_id;
    double score = 0.0;  // inner product
    std::size_t rank = 0;  // 1-based
};

/// Exact inner-product index over the full corpus. Immutable once built;
/// any number of threads may search concurrently.
///
/// Ordering contract: hits sort by score descending, ties by doc_id ascending.
/// Scores are sequential double-accumulated dot products, so equal vectors
/// give bit-equal scores and the tie-break is platform-stable.
class FlatIndex {
public:
    FlatIndex() = default;

    static FlatIndex build(std::vector<std::pair<std::string, EmbeddingVector>> items) {
        FlatIndex index;
        if (!items.empty()) index.dim_ = items.front().second.dim();
        index.ids_.reserve(items.size());
        index.vectors_.reserve(items.size());
        for (auto& [id, vec] : items) {
            if (vec.dim() != index.dim_)
                raise(Errc::dim_mismatch, "index build: vector for '" + id + "' has dim " +
                                              std::to_string(vec.dim()) + ", expected " +
                                              std::to_string(index.dim_));
            if (!index.position_.emplace(id, index.ids_.size()).second)
                raise(Errc::duplicate_id, "index build: duplicate doc id '" + id + "'");
            index.ids_.push_back(std::move(id));
            index.vectors_.push_back(std::move(vec));
        }
        return index;
    }

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dim() const noexcept { return dim_; }

    bool contains(const std::string& doc_id) const { return position_.count(doc_id) != 0; }

    const EmbeddingVector& vector_of(const std::string& doc_id) const {
        auto it = position_.find(doc_id);
        if (it == position_.end()) raise(Errc::unknown_doc, "unknown doc id '" + doc_id + "'");
        return vectors_[it->second];
    }

    const std::vector<std::string>& doc_ids() const noexcept { return ids_; }

    const EmbeddingVector& vector_at(std::size_t pos) const { return vectors_.at(pos); }

    static double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.values.size(); ++i)
            acc += static_cast<double>(a.values[i]) * static_cast<double>(b.values[i]);
        return acc;
    }

    std::vector<SearchHit> search(const EmbeddingVector& query, std::size_t k) const {
        if (ids_.empty()) raise(Errc::empty_index, "search on empty index");
        if (query.dim() != dim_)
            raise(Errc::dim_mismatch, "search: query dim " + std::to_string(query.dim()) +
                                          ", index dim " + std::to_string(dim_));
        if (k == 0) raise(Errc::bad_config, "search: k must be >= 1");

        std::vector<std::pair<double, std::size_t>> scored;  // (score, entry position)
        scored.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i)
            scored.emplace_back(dot(query, vectors_[i]), i);

        const std::size_t n = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n),
                          scored.end(), [this](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return ids_[a.second] < ids_[b.second];
                          });
        std::vector<SearchHit> hits;
        hits.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            hits.push_back({ids_[scored[i].second], scored[i].first, i + 1});
        return hits;
    }

    /// Full-corpus 1-based rank of `doc_id` for `query` under the tie-broken
    /// ordering. Computed by counting, so it never materializes the sort.
    std::size_t rank_of(const EmbeddingVector& query, const std::string& doc_id) const {
        auto it = position_.find(doc_id);
        if (it == position_.end()) raise(Errc::unknown_doc, "rank_of: unknown doc id '" + doc_id + "'");
        if (query.dim() != dim_)
            raise(Errc::dim_mismatch, "rank_of: query dim " + std::to_string(query.dim()) +
                                          ", index dim " + std::to_string(dim_));
        const double target = dot(query, vectors_[it->second]);
        std::size_t better = 0;
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            if (i == it->second) continue;
            const double s = dot(query, vectors_[i]);
            if (s > target || (s == target && ids_[i] < doc_id)) ++better;
        }
        return better + 1;
    }

    // ---- on-disk snapshot ----------------------------------------------------
    // Layout: "RRBIDX1" | u32 dim | u64 count | per entry: u32 id_len, id bytes,
    // dim little-endian f32. Round-trips bit-exactly.

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) raise(Errc::bad_snapshot, "cannot open '" + path + "' for writing");
        out.write(kMagic, 7);
        write_u32(out, static_cast<std::uint32_t>(dim_));
        write_u64(out, static_cast<std::uint64_t>(ids_.size()));
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            write_u32(out, static_cast<std::uint32_t>(ids_[i].size()));
            out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
            for (float v : vectors_[i].values) write_f32(out, v);
        }
        if (!out) raise(Errc::bad_snapshot, "write failed for '" + path + "'");
    }

    static FlatIndex load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) raise(Errc::bad_snapshot, "cannot open snapshot '" + path + "'");
        std::uint64_t offset = 0;
        char magic[7];
        read_bytes(in, magic, 7, path, offset);
        if (std::memcmp(magic, kMagic, 7) != 0)
            raise(Errc::bad_snapshot, "'" + path + "': bad magic at offset 0");
        const std::uint32_t dim = read_u32(in, path, offset);
        const std::uint64_t count = read_u64(in, path, offset);
        std::vector<std::pair<std::string, EmbeddingVector>> items;
        items.reserve(count);
        for (std::uint64_t e = 0; e < count; ++e) {
            const std::uint32_t id_len = read_u32(in, path, offset);
            std::string id(id_len, '\0');
            read_bytes(in, id.data(), id_len, path, offset);
            EmbeddingVector vec;
            vec.values.resize(dim);
            for (std::uint32_t d = 0; d < dim; ++d) {
                std::uint32_t bits = read_u32(in, path, offset);
                float f;
                std::memcpy(&f, &bits, 4);
                vec.values[d] = f;
            }
            items.emplace_back(std::move(id), std::move(vec));
        }
        return build(std::move(items));
    }

private:
    static constexpr const char* kMagic = "RRBIDX1";

    static void write_u32(std::ofstream& out, std::uint32_t v) {
        char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
        out.write(b, 4);
    }
    static void write_u64(std::ofstream& out, std::uint64_t v) {
        write_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
        write_u32(out, static_cast<std::uint32_t>(v >> 32));
    }
    static void write_f32(std::ofstream& out, float f) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }

    static void read_bytes(std::ifstream& in, char* dst, std::size_t n, const std::string& path,
                           std::uint64_t& offset) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            raise(Errc::bad_snapshot,
                  "'" + path + "': truncated at offset " + std::to_string(offset));
        offset += n;
    }
    static std::uint32_t read_u32(std::ifstream& in, const std::string& path,
                                  std::uint64_t& offset) {
        unsigned char b[4];
        read_bytes(in, reinterpret_cast<char*>(b), 4, path, offset);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    static std::uint64_t read_u64(std::ifstream& in, const std::string& path,
                                  std::uint64_t& offset) {
        const std::uint64_t lo = read_u32(in, path, offset);
        const std::uint64_t hi = read_u32(in, path, offset);
        return lo | (hi << 32);
    }

    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<EmbeddingVector> vectors_;
    std::unordered_map<std::string, std::size_t> position_;
};

}  // namespace rrb
