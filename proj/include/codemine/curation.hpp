#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/corpus.hpp"
#include "codemine/simgraph.hpp"

namespace codemine {

struct FilterParams {
    std::size_t k = 2;    // positive must rank within the top k of its row
    double delta = 0.7;   // and score strictly above delta

    void validate() const;
};

enum class FilterReason { passed, rank_fail, threshold_fail, both };
std::string_view to_string(FilterReason r);

struct CuratedPair {
    std::string query_id;
    std::string positive_id;
    float s_pos = 0.0f;
    std::size_t rank = 0;  // 1 + number of codes ranked ahead of the positive

    bool operator==(const CuratedPair&) const = default;
};

struct FilterOutcome {
    std::string query_id;
    bool kept = false;
    FilterReason reason = FilterReason::passed;
    float s_pos = 0.0f;
    // Exact when <= K'; otherwise K' + 1 as a lower bound.
    std::size_t rank = 0;

    bool operator==(const FilterOutcome&) const = default;
};

struct FilterResult {
    std::vector<CuratedPair> curated;     // sorted by query id
    std::vector<FilterOutcome> outcomes;  // one per cache row, sorted by query id
    std::map<std::string, std::size_t> reason_counts;
};

// Dual consistency filtering. corpus_ids is the set of record ids the cache
// must refer to.
FilterResult consistency_filter(const SimilarityCache& cache, const FilterParams& params,
                                std::span<const std::string> corpus_ids);

struct MiningParams {
    double gamma = 0.95;          // false-negative ratio against S_ii
    std::size_t pool_size = 100;  // P
    std::uint64_t seed = 0;       // fallback draws

    void validate() const;
};

struct PoolEntry {
    std::string code_id;
    float score = 0.0f;

    bool operator==(const PoolEntry&) const = default;
};

struct NegativePool {
    std::string query_id;
    std::string positive_id;
    float s_pos = 0.0f;
    std::vector<PoolEntry> entries;  // score desc, id asc
    bool fallback_used = false;

    bool operator==(const NegativePool&) const = default;
};

// Exact S_ij for (cache row index, code index); only consulted for fallback
// pools, whose candidates lie outside the cached neighbor list.
using ScoreLookup = std::function<float(std::size_t row, std::uint32_t code)>;

ScoreLookup store_scores(const VectorStore& texts, const VectorStore& codes, const SimilarityCache& cache);

std::vector<NegativePool> build_negative_pools(const SimilarityCache& cache, std::span<const CuratedPair> curated,
                                               const MiningParams& params, const ScoreLookup& exact_score);

// File formats.
void write_curated(const fs::path& path, std::span<const CuratedPair> curated);
std::vector<CuratedPair> read_curated(const fs::path& path);
void write_filter_outcomes(const fs::path& path, std::span<const FilterOutcome> outcomes);
void write_pools(const fs::path& path, std::span<const NegativePool> pools);
std::vector<NegativePool> read_pools(const fs::path& path);

// --- pair-correctness audit ---

enum class Verdict { yes, no, unparseable };
Verdict parse_verdict(std::string_view raw);

class JudgeBackend {
public:
    virtual ~JudgeBackend() = default;
    virtual std::string identity() const = 0;
    // Returns the raw answer text.
    virtual std::string judge(const std::string& prompt, const std::string& query, const std::string& code) = 0;
};

struct AuditParams {
    std::size_t sample_size = 10000;
    std::size_t seeds = 3;
    std::uint64_t base_seed = 0;
    std::string corpus_name = "corpus";
};

struct AuditCell {
    std::vector<double> percent_per_seed;
    double mean_percent = 0.0;
    double stddev_percent = 0.0;
    std::size_t judged = 0;  // over all seeds
};

struct AuditReport {
    std::string corpus_name;
    std::string prompt_version;
    std::size_t seeds = 0;
    std::size_t sample_size = 0;
    std::map<std::string, AuditCell> languages;
    AuditCell overall;
    std::size_t unparseable = 0;
    std::size_t failures = 0;

    std::string to_table() const;
    json to_json() const;
};

AuditReport audit_pairs(std::span<const PairRecord> pairs, JudgeBackend& judge, const AuditParams& params);

}  // namespace codemine
