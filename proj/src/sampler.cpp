#include "codemine/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace codemine {

void CurriculumSchedule::validate() const {
    if (!(tau_end > 0.0)) throw_usage("schedule: tau_end must be positive, got {}", tau_end);
    if (tau_start < tau_end) throw_usage("schedule: tau_start ({}) must be >= tau_end ({})", tau_start, tau_end);
    if (total_steps < 1) throw_usage("schedule: total_steps must be at least 1");
}

double tau_at(std::size_t step, const CurriculumSchedule& schedule) {
    schedule.validate();
    if (step >= schedule.total_steps)
        throw_usage("schedule: step {} out of range [0, {})", step, schedule.total_steps);
    if (schedule.total_steps == 1) return schedule.tau_start;
    const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps - 1);
    return schedule.tau_start + frac * (schedule.tau_end - schedule.tau_start);
}

std::vector<double> first_draw_probabilities(std::span<const float> scores, double tau) {
    if (scores.empty()) return {};
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<double> w(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        w[i] = std::exp((static_cast<double>(scores[i]) - mx) / tau);
        total += w[i];
    }
    for (double& x : w) x /= total;
    return w;
}

std::vector<std::size_t> softmax_draw(std::span<const float> scores, std::size_t m, double tau, Rng& rng) {
    if (m > scores.size())
        throw_usage("sampler: pool has {} entries but {} negatives were requested; raise the pool size P or lower M",
                    scores.size(), m);
    if (!(tau > 0.0)) throw_usage("sampler: temperature must be positive");
    std::vector<std::size_t> remaining(scores.size());
    for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] = i;
    std::vector<std::size_t> picked;
    picked.reserve(m);
    std::vector<double> w;
    for (std::size_t draw = 0; draw < m; ++draw) {
        double mx = -INFINITY;
        for (auto i : remaining) mx = std::max(mx, static_cast<double>(scores[i]));
        w.resize(remaining.size());
        double total = 0.0;
        for (std::size_t k = 0; k < remaining.size(); ++k) {
            w[k] = std::exp((static_cast<double>(scores[remaining[k]]) - mx) / tau);
            total += w[k];
        }
        const double u = rng.uniform() * total;
        double acc = 0.0;
        std::size_t chosen = remaining.size() - 1;
        for (std::size_t k = 0; k < remaining.size(); ++k) {
            acc += w[k];
            if (u < acc) {
                chosen = k;
                break;
            }
        }
        picked.push_back(remaining[chosen]);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
    return picked;
}

std::vector<std::string> sample_negatives(const NegativePool& pool, std::size_t m, double tau_prime,
                                          std::uint64_t seed, std::size_t step) {
    if (m < 1) throw_usage("sampler: M must be at least 1");
    if (pool.entries.size() < m)
        throw_usage("sampler: pool for \"{}\" has {} entries but M={}; raise the pool size P or lower M",
                    pool.query_id, pool.entries.size(), m);
    std::vector<float> scores(pool.entries.size());
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = pool.entries[i].score;
    Rng rng = Rng::keyed(seed, pool.query_id, step);
    std::vector<std::string> out;
    for (auto i : softmax_draw(scores, m, tau_prime, rng)) out.push_back(pool.entries[i].code_id);
    return out;
}

BatchStream::BatchStream(std::vector<CuratedPair> curated, const std::vector<NegativePool>& pools,
                         CurriculumSchedule schedule, std::size_t batch_size, std::size_t negatives, std::uint64_t seed)
    : curated_(std::move(curated)), schedule_(schedule), batch_size_(batch_size), negatives_(negatives), seed_(seed) {
    schedule_.validate();
    if (batch_size_ < 1) throw_usage("sampler: batch size N must be at least 1");
    if (curated_.size() < batch_size_)
        throw_data("sampler: {} curated queries is fewer than the batch size N={}", curated_.size(), batch_size_);
    std::sort(curated_.begin(), curated_.end(),
              [](const CuratedPair& a, const CuratedPair& b) { return a.query_id < b.query_id; });
    for (const auto& p : pools) pools_.emplace(p.query_id, p);
    if (negatives_ > 0) {
        for (const auto& c : curated_) {
            auto it = pools_.find(c.query_id);
            if (it == pools_.end()) throw_data("sampler: no negative pool for curated query \"{}\"", c.query_id);
            if (it->second.entries.size() < negatives_)
                throw_data("sampler: pool for \"{}\" has {} entries but M={}; raise the pool size P or lower M",
                           c.query_id, it->second.entries.size(), negatives_);
        }
    }
}

TrainingBatch BatchStream::batch(std::size_t step) const {
    const std::size_t per_epoch = steps_per_epoch();
    const std::size_t epoch = step / per_epoch;
    const std::size_t offset = (step % per_epoch) * batch_size_;

    std::vector<std::size_t> order(curated_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::keyed(seed_, "epoch", epoch);
    rng.shuffle(order);

    TrainingBatch b;
    b.step = step;
    b.tau_prime = tau_at(step, schedule_);
    b.items.resize(batch_size_);
    const auto n = static_cast<std::ptrdiff_t>(batch_size_);
#pragma omp parallel for schedule(static) if (negatives_ > 0 && batch_size_ >= 32)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        const auto& c = curated_[order[offset + static_cast<std::size_t>(k)]];
        BatchItem item{c.query_id, c.positive_id, {}};
        if (negatives_ > 0)
            item.negative_ids = sample_negatives(pools_.at(c.query_id), negatives_, b.tau_prime, seed_, step);
        b.items[static_cast<std::size_t>(k)] = std::move(item);
    }
    return b;
}

std::vector<TrainingBatch> emit_batches(const std::vector<CuratedPair>& curated, const std::vector<NegativePool>& pools,
                                        const CurriculumSchedule& schedule, std::size_t batch_size,
                                        std::size_t negatives, std::uint64_t seed) {
    BatchStream stream(curated, pools, schedule, batch_size, negatives, seed);
    std::vector<TrainingBatch> out;
    out.reserve(stream.total_steps());
    for (std::size_t s = 0; s < stream.total_steps(); ++s) out.push_back(stream.batch(s));
    return out;
}

json batch_to_json(const TrainingBatch& b) {
    json items = json::array();
    for (const auto& it : b.items)
        items.push_back({{"query_id", it.query_id}, {"positive_id", it.positive_id}, {"negative_ids", it.negative_ids}});
    return {{"step", b.step}, {"tau_prime", b.tau_prime}, {"items", items}};
}

void write_batches(const fs::path& path, std::span<const TrainingBatch> batches) {
    JsonlWriter w(path);
    for (const auto& b : batches) w.write(batch_to_json(b));
}

std::vector<TrainingBatch> read_batches(const fs::path& path) {
    std::vector<TrainingBatch> out;
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        TrainingBatch b;
        b.step = j.at("step").get<std::size_t>();
        b.tau_prime = j.at("tau_prime").get<double>();
        for (const auto& it : j.at("items"))
            b.items.push_back({require_string(it, "query_id", line_no), require_string(it, "positive_id", line_no),
                               it.at("negative_ids").get<std::vector<std::string>>()});
        out.push_back(std::move(b));
    });
    return out;
}

}  // namespace codemine
