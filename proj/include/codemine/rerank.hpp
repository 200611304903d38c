#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/corpus.hpp"
#include "codemine/curation.hpp"
#include "codemine/ranker.hpp"

namespace codemine {

struct WindowCandidate {
    int identifier = 0;  // 1-based label shown to the backend
    std::string candidate_id;
    std::string text;

    bool operator==(const WindowCandidate&) const = default;
};

struct Window {
    std::string query_id;
    std::string query;
    std::vector<WindowCandidate> candidates;
    std::size_t start = 0;  // position range in the full list
    std::size_t end = 0;
};

struct RerankParams {
    std::size_t window = 10;
    std::size_t stride = 5;
    std::size_t depth = 100;

    void validate() const;
};

class RerankBackend {
public:
    virtual ~RerankBackend() = default;
    virtual std::string identity() const = 0;
    // Raw response text, e.g. "[3] > [1] > [2]".
    virtual std::string rank(const Window& window, const std::string& prompt) = 0;
    virtual bool concurrent() const { return false; }
};

// Identifier tokens in order of appearance; unknown ids dropped, repeats
// dropped, missing ids appended in window order. Always a permutation of
// `identifiers`.
std::vector<int> parse_and_repair(std::string_view raw, std::span<const int> identifiers);

// [start, end) of each window, in processing order (bottom of the list first).
std::vector<std::pair<std::size_t, std::size_t>> window_positions(std::size_t list_size, const RerankParams& params);

using CandidateText = std::function<std::string(const std::string& candidate_id)>;

struct RerankOutcome {
    RankedList list;
    std::size_t windows = 0;
    std::size_t failures = 0;
};

// Single back-to-front pass over the top `depth` entries. Positions keep
// their original scores, so the output stays score-sorted and entries
// beyond depth are untouched.
RerankOutcome sliding_rerank(const std::string& query, const RankedList& ranked, const RerankParams& params,
                             RerankBackend& backend, const CandidateText& text_of);

struct RerankQuery {
    std::string query;
    RankedList ranked;
};

std::vector<RerankOutcome> rerank_all(std::span<const RerankQuery> queries, const RerankParams& params,
                                      RerankBackend& backend, const CandidateText& text_of,
                                      std::size_t max_in_flight = 4);

// --- listwise training data ---

struct ListwiseParams {
    std::size_t instances_per_tuple = 5;
    std::size_t min_size = 3;
    std::size_t max_size = 10;
    double min_s_pos = 0.8;        // tuple selection: similarity floor
    std::size_t max_rank = 1;      // tuple selection: positive rank ceiling
    std::size_t max_tuples = 50000;
    std::size_t pool_depth = 15;   // top pool entries eligible for windows
    std::uint64_t seed = 0;

    void validate() const;
};

struct ListwiseInstance {
    std::string query_id;
    std::string query;
    std::vector<WindowCandidate> candidates;  // shuffled, identifiers 1..m
    std::vector<int> teacher_ranking;

    bool operator==(const ListwiseInstance&) const = default;
};

struct ListwiseResult {
    std::vector<ListwiseInstance> instances;
    std::size_t tuples = 0;
    std::size_t skipped = 0;          // teacher failures
    std::size_t too_small = 0;        // tuples with fewer than min_size candidates
};

ListwiseResult gen_listwise_data(std::span<const CuratedPair> curated, std::span<const NegativePool> pools,
                                 std::span<const PairRecord> records, RerankBackend& teacher,
                                 const ListwiseParams& params);

void write_instances(const fs::path& path, std::span<const ListwiseInstance> instances);
std::vector<ListwiseInstance> read_instances(const fs::path& path);

// Formats a ranking as "[a] > [b] > ...".
std::string format_ranking(std::span<const int> ranking);

}  // namespace codemine
