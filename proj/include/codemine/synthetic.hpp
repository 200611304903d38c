#pragma once

#include <set>
#include <string>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/contrastive.hpp"
#include "codemine/corpus.hpp"
#include "codemine/curation.hpp"
#include "codemine/localize.hpp"

namespace codemine {

// Topic corpus: every topic owns two invented nouns, and each of its pairs
// applies one of ten shared operations to them. Queries are paraphrased
// with synonyms and filler words. A fraction of pairs is corrupted by
// swapping in code written for a different topic and operation.
struct TopicCorpusParams {
    std::size_t topics = 200;
    std::size_t pairs_per_topic = 10;
    double noise_fraction = 0.3;
    std::size_t heldout_per_topic = 2;  // always clean
    std::uint64_t seed = 0;
    std::string language = "python";
};

struct TopicCorpus {
    std::vector<PairRecord> records;  // sorted by id
    std::vector<std::string> heldout_ids;
    std::set<std::string> noisy_ids;
};

TopicCorpus make_topic_corpus(const TopicCorpusParams& params);

// Small fixture for end-to-end runs: a topic corpus plus records that
// each prefilter rule rejects.
std::vector<PairRecord> make_fixture_pairs(std::size_t topics, std::uint64_t seed);

// Per-instance repository snapshots where gold functions share rare
// tokens with the issue text.
struct LocalizationBench {
    std::vector<FunctionRecord> functions;
    std::vector<GoldLabels> gold;
};

LocalizationBench make_localization_bench(std::size_t instances, std::uint64_t seed);

struct ToyExperimentParams {
    TopicCorpusParams corpus;
    ToyConfig train;              // `negatives` applies to the curated arm
    FilterParams filter;
    MiningParams mining;
    std::size_t stub_dim = 256;   // proxy embedding used for filtering
};

struct ToyExperimentResult {
    double baseline_mrr = 0.0;    // unfiltered, in-batch negatives only
    double treatment_mrr = 0.0;   // filtered, curriculum hard negatives
    std::size_t train_pairs = 0;
    std::size_t curated_pairs = 0;
    std::size_t noisy_removed = 0;
    ToyTrace baseline;
    ToyTrace treatment;
};

ToyExperimentResult run_toy_experiment(const ToyExperimentParams& params);

}  // namespace codemine
