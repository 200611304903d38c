#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/embedder.hpp"
#include "codemine/ranker.hpp"
#include "codemine/rerank.hpp"

namespace codemine {

struct FunctionRecord {
    std::string function_id;
    std::string file_path;
    std::string name;
    std::string docstring;
    std::string body;
    // Empty means the function belongs to every instance's snapshot.
    std::string instance_id;

    // Embedding text: docstring and body joined by a newline.
    std::string candidate_text() const;
    bool operator==(const FunctionRecord&) const = default;
};

struct GoldLabels {
    std::string instance_id;
    std::string issue;
    std::set<std::string> gold_functions;
    std::set<std::string> gold_files;  // explicitly listed; function files are added on evaluation

    bool operator==(const GoldLabels&) const = default;
};

std::vector<FunctionRecord> read_snapshot(const fs::path& path);
void write_snapshot(const fs::path& path, std::span<const FunctionRecord> functions);
std::vector<GoldLabels> read_gold(const fs::path& path);
void write_gold(const fs::path& path, std::span<const GoldLabels> gold);

// Functions visible to one instance: its own plus the shared ones, in input order.
std::vector<FunctionRecord> snapshot_for(std::span<const FunctionRecord> all, const std::string& instance_id);

VectorStore embed_snapshot(std::span<const FunctionRecord> snapshot, EmbeddingProvider& provider);

struct LocalizeParams {
    std::size_t retrieve_depth = 100;
    RerankParams rerank;
};

// Retrieval over the snapshot store, then an optional sliding rerank.
RankedList localize(const std::string& instance_id, const std::string& issue,
                    std::span<const FunctionRecord> snapshot, const VectorStore& index,
                    EmbeddingProvider& provider, RerankBackend* reranker, const LocalizeParams& params);

// Files in order of first appearance among the ranked functions.
std::vector<std::string> file_rollup(const RankedList& ranked,
                                     const std::unordered_map<std::string, std::string>& file_of);

enum class HitMode { any, complete };
std::string_view to_string(HitMode m);

struct InstanceHits {
    std::string instance_id;
    std::map<std::size_t, bool> file_any, file_complete, function_any, function_complete;
};

struct LocalizationReport {
    std::vector<std::size_t> file_ks{1, 2, 3};
    std::vector<std::size_t> function_ks{5, 10};
    HitMode primary_mode = HitMode::any;
    std::map<std::size_t, double> file_any, file_complete, function_any, function_complete;
    std::vector<InstanceHits> instances;

    std::string to_table() const;
    json to_json() const;
};

// Predictions are keyed by instance id through RankedList::query_id.
// `file_of` maps every function id that may appear to its file.
LocalizationReport eval_localization(std::span<const RankedList> predictions, std::span<const GoldLabels> gold,
                                     const std::unordered_map<std::string, std::string>& file_of,
                                     std::vector<std::size_t> file_ks = {1, 2, 3},
                                     std::vector<std::size_t> function_ks = {5, 10});

}  // namespace codemine
