#pragma once

#include <string>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/contrastive.hpp"
#include "codemine/corpus.hpp"
#include "codemine/curation.hpp"
#include "codemine/embedder.hpp"
#include "codemine/localize.hpp"
#include "codemine/rerank.hpp"
#include "codemine/simgraph.hpp"

namespace codemine {

// Every tunable of every stage and its default.
struct PipelineConfig {
    std::string workdir = "run";
    std::string pairs;            // ingest input
    std::string language = "python";
    std::string snapshot;         // localize input
    std::string gold;             // localize input
    std::string run_file;         // eval override (default: the retrieve or rerank run)
    std::string qrels_file;       // eval override
    bool eval_localization = false;
    bool eval_reranked = false;

    std::string provider = "stub";
    std::string reranker = "identity";
    std::string teacher = "stub";
    std::string judge = "stub";
    std::size_t stub_dim = 256;
    double judge_threshold = 0.3;

    std::uint64_t seed = 0;
    int threads = 0;
    bool force = false;
    bool binary_cache = false;

    PrefilterConfig prefilter;
    EmbedOptions embed;
    NeighborParams neighbors;
    FilterParams filter;
    MiningParams mining;

    std::size_t batch_size = 128;  // N
    std::size_t negatives = 15;    // M
    std::size_t steps = 100;
    double tau_start = 0.05;
    double tau_end = 0.001;

    ToyConfig toy;
    std::size_t heldout_every = 10;  // train-toy holds out one query in this many

    std::size_t topk = 1000;
    std::vector<std::string> metrics{"MRR@1000", "nDCG@10", "Recall@100"};
    RerankParams rerank;
    std::size_t max_in_flight = 4;
    ListwiseParams listwise;
    AuditParams audit;
    LocalizeParams localize;
    bool localize_rerank = false;

    json to_json() const;
};

const std::vector<std::string>& stage_names();

// Runs one stage; throws codemine::Error on failure.
void run_stage(const std::string& stage, const PipelineConfig& config);

// Artifact file names inside the working directory, and the stage that
// writes each one.
struct ArtifactInfo {
    std::string file;
    std::string stage;
};
const std::vector<ArtifactInfo>& artifacts();

}  // namespace codemine
