#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/embedder.hpp"

namespace codemine {

struct RankedEntry {
    std::string id;
    float score = 0.0f;

    bool operator==(const RankedEntry&) const = default;
};

// Scores non-increasing, ties by id ascending, ids unique.
struct RankedList {
    std::string query_id;
    std::vector<RankedEntry> entries;

    bool operator==(const RankedList&) const = default;
};

// Exact top-k by cosine over the index.
RankedList search(const VectorStore& index, std::span<const float> query, std::size_t k,
                  std::string query_id = {});

// One list per query row, in query order. Parallel over queries.
std::vector<RankedList> search_batch(const VectorStore& index, const VectorStore& queries, std::size_t k);

enum class MetricKind { mrr, ndcg, recall };

struct MetricSpec {
    MetricKind kind = MetricKind::mrr;
    std::size_t k = 10;

    std::string name() const;
    // "MRR@1000", "nDCG@10", "Recall@100" (case-insensitive).
    static MetricSpec parse(std::string_view s);
};

// Relevant (relevance = 1) candidate ids per query.
using Qrels = std::map<std::string, std::set<std::string>>;

struct MetricReport {
    std::string metric;
    std::map<std::string, double> per_query;
    double mean = 0.0;
    // Queries scored 0 because they have no relevant ids.
    std::vector<std::string> flagged;
};

MetricReport compute_metrics(std::span<const RankedList> runs, const Qrels& qrels, const MetricSpec& spec);

// trec run: "qid Q0 docid rank score tag"; the Q0 column is optional on read.
void write_run(const fs::path& path, std::span<const RankedList> runs, std::string_view tag);
std::vector<RankedList> read_run(const fs::path& path);
// qrels: "qid 0 docid rel"; the iteration column is optional on read.
void write_qrels(const fs::path& path, const Qrels& qrels);
Qrels read_qrels(const fs::path& path);

}  // namespace codemine
