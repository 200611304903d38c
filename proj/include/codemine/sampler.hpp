#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/curation.hpp"

namespace codemine {

// Linear anneal of the negative-sampling temperature, one value per
// global training step.
struct CurriculumSchedule {
    double tau_start = 0.05;
    double tau_end = 0.001;
    std::size_t total_steps = 1;

    void validate() const;
};

double tau_at(std::size_t step, const CurriculumSchedule& schedule);

// Sequential softmax draws without replacement over `scores` at
// temperature tau. Returns positions into `scores`.
std::vector<std::size_t> softmax_draw(std::span<const float> scores, std::size_t m, double tau, Rng& rng);

// Probability of each entry being the first draw.
std::vector<double> first_draw_probabilities(std::span<const float> scores, double tau);

std::vector<std::string> sample_negatives(const NegativePool& pool, std::size_t m, double tau_prime,
                                          std::uint64_t seed, std::size_t step);

struct BatchItem {
    std::string query_id;
    std::string positive_id;
    std::vector<std::string> negative_ids;

    bool operator==(const BatchItem&) const = default;
};

struct TrainingBatch {
    std::size_t step = 0;
    double tau_prime = 0.0;
    std::vector<BatchItem> items;

    bool operator==(const TrainingBatch&) const = default;
};

// Each positive is contrasted with every other in-batch positive and every
// hard negative in the batch.
constexpr std::size_t contrastive_negatives_per_positive(std::size_t n, std::size_t m) { return n * (m + 1) - 1; }

// Random-access batch stream: batch(step) is a pure function of the
// constructor arguments and step. m = 0 yields in-batch-only batches.
class BatchStream {
public:
    BatchStream(std::vector<CuratedPair> curated, const std::vector<NegativePool>& pools,
                CurriculumSchedule schedule, std::size_t batch_size, std::size_t negatives, std::uint64_t seed);

    std::size_t steps_per_epoch() const noexcept { return curated_.size() / batch_size_; }
    std::size_t total_steps() const noexcept { return schedule_.total_steps; }
    TrainingBatch batch(std::size_t step) const;

private:
    std::vector<CuratedPair> curated_;  // sorted by query id
    std::unordered_map<std::string, NegativePool> pools_;
    CurriculumSchedule schedule_;
    std::size_t batch_size_;
    std::size_t negatives_;
    std::uint64_t seed_;
};

std::vector<TrainingBatch> emit_batches(const std::vector<CuratedPair>& curated, const std::vector<NegativePool>& pools,
                                        const CurriculumSchedule& schedule, std::size_t batch_size,
                                        std::size_t negatives, std::uint64_t seed);

json batch_to_json(const TrainingBatch& b);
void write_batches(const fs::path& path, std::span<const TrainingBatch> batches);
std::vector<TrainingBatch> read_batches(const fs::path& path);

}  // namespace codemine
