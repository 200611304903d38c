#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/embedder.hpp"

namespace codemine {

struct Neighbor {
    std::uint32_t code;  // index into SimilarityCache::code_ids
    float score;

    bool operator==(const Neighbor&) const = default;
};

struct CacheRow {
    std::string query_id;
    std::uint32_t positive = 0;  // code index of the paired code
    float s_pos = 0.0f;          // S_ii
    std::vector<Neighbor> neighbors;  // score desc, code id asc

    bool operator==(const CacheRow&) const = default;
};

// Sparse stand-in for the full text x code similarity matrix: each text row
// keeps its exact top-K' codes plus the diagonal score.
struct SimilarityCache {
    std::size_t k_prime = 0;
    std::uint64_t lineage = 0;
    std::vector<std::string> code_ids;
    std::vector<CacheRow> rows;

    bool operator==(const SimilarityCache&) const = default;

    const std::string& code_id(const Neighbor& n) const { return code_ids[n.code]; }
    const std::string& positive_id(const CacheRow& r) const { return code_ids[r.positive]; }

    void save_jsonl(const fs::path& path) const;
    static SimilarityCache load_jsonl(const fs::path& path);
    void save_binary(const fs::path& path) const;
    static SimilarityCache load_binary(const fs::path& path);
    // Picks the format from the extension (.bin = binary).
    void save(const fs::path& path) const;
    static SimilarityCache load(const fs::path& path);
};

struct NeighborParams {
    std::size_t k_prime = 128;
    std::size_t block = 64;         // text rows per block
    std::size_t required_min = 1;   // max(filter k, pool size + 1)
};

// Blocked, OpenMP-parallel exact top-K'. Output is bit-identical for every
// block size and thread count.
SimilarityCache compute_neighbors(const VectorStore& texts, const VectorStore& codes, const NeighborParams& params);

// Serial reference: materializes every score and fully sorts each row.
SimilarityCache brute_force_neighbors(const VectorStore& texts, const VectorStore& codes, std::size_t k_prime);

// Strict weak order used for all neighbor lists: higher score first, then
// smaller code id.
inline bool ranks_before(float score_a, const std::string& id_a, float score_b, const std::string& id_b) {
    if (score_a != score_b) return score_a > score_b;
    return id_a < id_b;
}

}  // namespace codemine
