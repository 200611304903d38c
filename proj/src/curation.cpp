#include "codemine/curation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "codemine/prompts.hpp"

namespace codemine {

namespace {

constexpr std::string_view kFilterReasonNames[] = {"passed", "rank_fail", "threshold_fail", "both"};

std::size_t rank_of_positive(const SimilarityCache& cache, const CacheRow& row) {
    const std::string& pos_id = cache.code_ids[row.positive];
    std::size_t ahead = 0;
    for (const auto& n : row.neighbors) {
        if (n.code == row.positive) continue;
        if (ranks_before(n.score, cache.code_ids[n.code], row.s_pos, pos_id))
            ++ahead;
        else
            break;  // list is sorted in the same order
    }
    return ahead + 1;
}

}  // namespace

void FilterParams::validate() const {
    if (k < 1) throw_usage("filter: k must be at least 1");
    if (!(delta > -1.0 && delta < 1.0)) throw_usage("filter: delta must lie in (-1, 1), got {}", delta);
}

void MiningParams::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw_usage("mine: gamma must lie in (0, 1], got {}", gamma);
    if (pool_size < 1) throw_usage("mine: pool size must be at least 1");
}

std::string_view to_string(FilterReason r) { return kFilterReasonNames[static_cast<int>(r)]; }

FilterResult consistency_filter(const SimilarityCache& cache, const FilterParams& params,
                                std::span<const std::string> corpus_ids) {
    params.validate();
    if (cache.k_prime < params.k)
        throw_usage("filter: cache K'={} is smaller than k={}; rebuild neighbors with a larger K'", cache.k_prime,
                    params.k);
    std::unordered_set<std::string_view> known(corpus_ids.begin(), corpus_ids.end());

    FilterResult result;
    result.outcomes.resize(cache.rows.size());
    for (std::size_t i = 0; i < cache.rows.size(); ++i) {
        const auto& row = cache.rows[i];
        if (!known.contains(row.query_id))
            throw_data("filter: cache row \"{}\" does not exist in the corpus", row.query_id);
        const std::size_t rank = rank_of_positive(cache, row);
        const bool rank_ok = rank <= params.k;
        const bool threshold_ok = static_cast<double>(row.s_pos) > params.delta;
        FilterOutcome o{row.query_id, rank_ok && threshold_ok, FilterReason::passed, row.s_pos, rank};
        if (!rank_ok && !threshold_ok)
            o.reason = FilterReason::both;
        else if (!rank_ok)
            o.reason = FilterReason::rank_fail;
        else if (!threshold_ok)
            o.reason = FilterReason::threshold_fail;
        result.outcomes[i] = std::move(o);
    }
    std::sort(result.outcomes.begin(), result.outcomes.end(),
              [](const FilterOutcome& a, const FilterOutcome& b) { return a.query_id < b.query_id; });

    std::unordered_map<std::string_view, const CacheRow*> by_id;
    for (const auto& r : cache.rows) by_id.emplace(r.query_id, &r);
    for (const auto& o : result.outcomes) {
        ++result.reason_counts[std::string(to_string(o.reason))];
        if (!o.kept) continue;
        const CacheRow& row = *by_id.at(o.query_id);
        result.curated.push_back({o.query_id, cache.code_ids[row.positive], o.s_pos, o.rank});
    }
    return result;
}

ScoreLookup store_scores(const VectorStore& texts, const VectorStore& codes, const SimilarityCache& cache) {
    std::vector<std::size_t> text_index(cache.rows.size());
    for (std::size_t i = 0; i < cache.rows.size(); ++i) {
        auto t = texts.find(cache.rows[i].query_id);
        if (!t) throw_data("text store has no row for \"{}\"", cache.rows[i].query_id);
        text_index[i] = *t;
    }
    std::vector<std::size_t> code_index(cache.code_ids.size());
    for (std::size_t c = 0; c < cache.code_ids.size(); ++c) {
        auto k = codes.find(cache.code_ids[c]);
        if (!k) throw_data("code store has no row for \"{}\"", cache.code_ids[c]);
        code_index[c] = *k;
    }
    return [&texts, &codes, text_index = std::move(text_index), code_index = std::move(code_index)](
               std::size_t row, std::uint32_t code) {
        return dot_score(texts.row(text_index[row]), codes.row(code_index[code]));
    };
}

std::vector<NegativePool> build_negative_pools(const SimilarityCache& cache, std::span<const CuratedPair> curated,
                                               const MiningParams& params, const ScoreLookup& exact_score) {
    params.validate();
    std::unordered_map<std::string_view, std::size_t> row_of;
    for (std::size_t i = 0; i < cache.rows.size(); ++i) row_of.emplace(cache.rows[i].query_id, i);
    for (const auto& c : curated)
        if (!row_of.contains(c.query_id)) throw_data("mine: curated query \"{}\" is not in the cache", c.query_id);

    std::vector<NegativePool> pools(curated.size());
    const auto n = static_cast<std::ptrdiff_t>(curated.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t q = 0; q < n; ++q) {
        const auto& cp = curated[q];
        const std::size_t row_index = row_of.at(cp.query_id);
        const CacheRow& row = cache.rows[row_index];
        const double cutoff = params.gamma * static_cast<double>(row.s_pos);

        NegativePool pool{cp.query_id, cache.code_ids[row.positive], row.s_pos, {}, false};
        for (const auto& nb : row.neighbors) {
            if (pool.entries.size() >= params.pool_size) break;
            if (nb.code == row.positive) continue;
            if (static_cast<double>(nb.score) > cutoff) continue;
            pool.entries.push_back({cache.code_ids[nb.code], nb.score});
        }

        if (pool.entries.empty()) {
            pool.fallback_used = true;
            // Every code at or below the cutoff is eligible, whether or not
            // it made the cached neighbor list.
            std::vector<std::pair<std::uint32_t, float>> candidates;
            for (std::uint32_t c = 0; c < cache.code_ids.size(); ++c) {
                if (c == row.positive) continue;
                const float s = exact_score(row_index, c);
                if (static_cast<double>(s) <= cutoff) candidates.emplace_back(c, s);
            }
            // Draw order must not depend on code store order.
            std::sort(candidates.begin(), candidates.end(),
                      [&](const auto& a, const auto& b) { return cache.code_ids[a.first] < cache.code_ids[b.first]; });
            Rng rng = Rng::keyed(params.seed, cp.query_id, 0);
            rng.shuffle(candidates);
            if (candidates.size() > params.pool_size) candidates.resize(params.pool_size);
            for (const auto& [c, s] : candidates) pool.entries.push_back({cache.code_ids[c], s});
            std::sort(pool.entries.begin(), pool.entries.end(), [](const PoolEntry& a, const PoolEntry& b) {
                return ranks_before(a.score, a.code_id, b.score, b.code_id);
            });
        }
        pools[q] = std::move(pool);
    }
    return pools;
}

void write_curated(const fs::path& path, std::span<const CuratedPair> curated) {
    JsonlWriter w(path);
    for (const auto& c : curated)
        w.write({{"query_id", c.query_id}, {"positive_id", c.positive_id}, {"s_pos", c.s_pos}, {"rank", c.rank}});
}

std::vector<CuratedPair> read_curated(const fs::path& path) {
    std::vector<CuratedPair> out;
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        out.push_back({require_string(j, "query_id", line_no), require_string(j, "positive_id", line_no),
                       j.at("s_pos").get<float>(), j.at("rank").get<std::size_t>()});
    });
    return out;
}

void write_filter_outcomes(const fs::path& path, std::span<const FilterOutcome> outcomes) {
    JsonlWriter w(path);
    for (const auto& o : outcomes)
        w.write({{"query_id", o.query_id},
                 {"kept", o.kept},
                 {"reason", to_string(o.reason)},
                 {"s_pos", o.s_pos},
                 {"rank", o.rank}});
}

void write_pools(const fs::path& path, std::span<const NegativePool> pools) {
    JsonlWriter w(path);
    for (const auto& p : pools) {
        json entries = json::array();
        for (const auto& e : p.entries) entries.push_back(json::array({e.code_id, e.score}));
        w.write({{"query_id", p.query_id},
                 {"positive_id", p.positive_id},
                 {"s_pos", p.s_pos},
                 {"entries", entries},
                 {"fallback_used", p.fallback_used}});
    }
}

std::vector<NegativePool> read_pools(const fs::path& path) {
    std::vector<NegativePool> out;
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        NegativePool p;
        p.query_id = require_string(j, "query_id", line_no);
        p.positive_id = optional_string(j, "positive_id");
        p.s_pos = j.value("s_pos", 0.0f);
        for (const auto& e : j.at("entries")) p.entries.push_back({e.at(0).get<std::string>(), e.at(1).get<float>()});
        p.fallback_used = j.value("fallback_used", false);
        out.push_back(std::move(p));
    });
    return out;
}

Verdict parse_verdict(std::string_view raw) {
    std::size_t i = 0;
    while (i < raw.size() && !std::isalpha(static_cast<unsigned char>(raw[i]))) ++i;
    std::string word;
    while (i < raw.size() && std::isalpha(static_cast<unsigned char>(raw[i])))
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(raw[i++]))));
    if (word == "yes") return Verdict::yes;
    if (word == "no") return Verdict::no;
    return Verdict::unparseable;
}

namespace {

void finish_cell(AuditCell& cell) {
    if (cell.percent_per_seed.empty()) return;
    const double n = static_cast<double>(cell.percent_per_seed.size());
    cell.mean_percent = std::accumulate(cell.percent_per_seed.begin(), cell.percent_per_seed.end(), 0.0) / n;
    double var = 0.0;
    for (double p : cell.percent_per_seed) var += (p - cell.mean_percent) * (p - cell.mean_percent);
    cell.stddev_percent = std::sqrt(var / n);
}

json cell_json(const AuditCell& c) {
    return {{"mean_percent", c.mean_percent},
            {"stddev_percent", c.stddev_percent},
            {"percent_per_seed", c.percent_per_seed},
            {"judged", c.judged}};
}

}  // namespace

AuditReport audit_pairs(std::span<const PairRecord> pairs, JudgeBackend& judge, const AuditParams& params) {
    if (pairs.empty()) throw_usage("audit: no pairs to sample");
    if (params.sample_size < 1) throw_usage("audit: sample size must be at least 1");
    if (params.seeds < 1) throw_usage("audit: need at least one seed");

    AuditReport report;
    report.corpus_name = params.corpus_name;
    report.prompt_version = std::string(prompts::kJudgeVersion);
    report.seeds = params.seeds;
    report.sample_size = std::min(params.sample_size, pairs.size());

    // Sample over id order so input order does not matter.
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return pairs[a].id < pairs[b].id; });

    for (std::size_t s = 0; s < params.seeds; ++s) {
        Rng rng(params.base_seed + s);
        std::vector<std::size_t> sample = order;
        rng.shuffle(sample);
        sample.resize(report.sample_size);

        std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // language -> (correct, judged)
        std::size_t all_correct = 0, all_judged = 0;
        for (auto idx : sample) {
            const auto& p = pairs[idx];
            std::string raw;
            try {
                raw = judge.judge(prompts::render_judge(p.text, p.code), p.text, p.code);
            } catch (const std::exception& e) {
                ++report.failures;
                spdlog::warn("audit: judge failed on \"{}\": {}", p.id, e.what());
                continue;
            }
            Verdict v = parse_verdict(raw);
            if (v == Verdict::unparseable) {
                ++report.unparseable;
                spdlog::warn("audit: unparseable verdict for \"{}\": {:.60}", p.id, raw);
            }
            const bool ok = v == Verdict::yes;
            auto& t = tally[p.language];
            t.first += ok;
            ++t.second;
            all_correct += ok;
            ++all_judged;
        }
        for (const auto& [lang, t] : tally) {
            auto& cell = report.languages[lang];
            cell.percent_per_seed.push_back(100.0 * static_cast<double>(t.first) / static_cast<double>(t.second));
            cell.judged += t.second;
        }
        if (all_judged > 0) {
            report.overall.percent_per_seed.push_back(100.0 * static_cast<double>(all_correct) /
                                                      static_cast<double>(all_judged));
            report.overall.judged += all_judged;
        }
    }
    for (auto& [lang, cell] : report.languages) finish_cell(cell);
    finish_cell(report.overall);
    return report;
}

std::string AuditReport::to_table() const {
    std::string out = fmt::format("{:<16} {:<12} {:>10} {:>8} {:>8}\n", "dataset", "language", "% Correct", "sd", "judged");
    for (const auto& [lang, c] : languages)
        out += fmt::format("{:<16} {:<12} {:>10.1f} {:>8.2f} {:>8}\n", corpus_name, lang, c.mean_percent,
                           c.stddev_percent, c.judged);
    out += fmt::format("{:<16} {:<12} {:>10.1f} {:>8.2f} {:>8}\n", corpus_name, "all", overall.mean_percent,
                       overall.stddev_percent, overall.judged);
    out += fmt::format("seeds={} sample={} unparseable={} failures={} prompt={}\n", seeds, sample_size, unparseable,
                       failures, prompt_version);
    return out;
}

json AuditReport::to_json() const {
    json langs = json::object();
    for (const auto& [lang, c] : languages) langs[lang] = cell_json(c);
    return {{"corpus", corpus_name},     {"prompt_version", prompt_version}, {"seeds", seeds},
            {"sample_size", sample_size}, {"languages", langs},              {"overall", cell_json(overall)},
            {"unparseable", unparseable}, {"failures", failures}};
}

}  // namespace codemine
