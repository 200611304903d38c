#include "codemine/rerank.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "codemine/prompts.hpp"

namespace codemine {

void RerankParams::validate() const {
    if (!(stride >= 1 && stride <= window && window <= depth))
        throw_usage("rerank: need 1 <= stride <= window <= depth (got stride={}, window={}, depth={})", stride, window,
                    depth);
}

void ListwiseParams::validate() const {
    if (min_size < 1 || min_size > max_size) throw_usage("listwise: need 1 <= min size <= max size");
    if (instances_per_tuple < 1) throw_usage("listwise: instances per tuple must be at least 1");
}

std::string format_ranking(std::span<const int> ranking) {
    std::string out;
    for (std::size_t i = 0; i < ranking.size(); ++i) out += fmt::format("{}[{}]", i ? " > " : "", ranking[i]);
    return out;
}

std::vector<int> parse_and_repair(std::string_view raw, std::span<const int> identifiers) {
    std::vector<int> tokens;
    // Bracketed identifiers first; bare integers only if there are none.
    for (int pass = 0; pass < 2 && tokens.empty(); ++pass) {
        std::size_t i = 0;
        while (i < raw.size()) {
            const bool open = raw[i] == '[';
            if ((pass == 0 && open) || (pass == 1 && std::isdigit(static_cast<unsigned char>(raw[i])))) {
                std::size_t j = pass == 0 ? i + 1 : i;
                while (j < raw.size() && raw[j] == ' ') ++j;
                std::size_t k = j;
                while (k < raw.size() && std::isdigit(static_cast<unsigned char>(raw[k]))) ++k;
                std::size_t close = k;
                while (close < raw.size() && raw[close] == ' ') ++close;
                const bool ok = k > j && k - j <= 9 && (pass == 1 || (close < raw.size() && raw[close] == ']'));
                if (ok) tokens.push_back(std::stoi(std::string(raw.substr(j, k - j))));
                i = std::max(k, i + 1);
                continue;
            }
            ++i;
        }
    }
    std::unordered_set<int> valid(identifiers.begin(), identifiers.end());
    std::unordered_set<int> used;
    std::vector<int> out;
    out.reserve(identifiers.size());
    for (int t : tokens)
        if (valid.contains(t) && used.insert(t).second) out.push_back(t);
    for (int id : identifiers)
        if (used.insert(id).second) out.push_back(id);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> window_positions(std::size_t list_size, const RerankParams& params) {
    params.validate();
    const std::size_t d = std::min(list_size, params.depth);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (d == 0) return out;
    if (d <= params.window) {
        out.emplace_back(0, d);
        return out;
    }
    std::size_t start = d - params.window;
    out.emplace_back(start, start + params.window);
    while (start > 0) {
        start = start >= params.stride ? start - params.stride : 0;
        out.emplace_back(start, start + params.window);
    }
    return out;
}

RerankOutcome sliding_rerank(const std::string& query, const RankedList& ranked, const RerankParams& params,
                             RerankBackend& backend, const CandidateText& text_of) {
    if (ranked.entries.empty()) throw_usage("rerank: query \"{}\" has an empty candidate list", ranked.query_id);
    RerankOutcome out;
    out.list = ranked;
    auto& entries = out.list.entries;
    for (const auto& [start, end] : window_positions(entries.size(), params)) {
        if (end - start < 2) continue;
        ++out.windows;
        Window w{ranked.query_id, query, {}, start, end};
        std::vector<int> ids;
        std::vector<prompts::Passage> passages;
        w.candidates.reserve(end - start);
        for (std::size_t p = start; p < end; ++p) {
            const int ident = static_cast<int>(p - start + 1);
            w.candidates.push_back({ident, entries[p].id, text_of(entries[p].id)});
            ids.push_back(ident);
        }
        for (const auto& c : w.candidates) passages.push_back({c.identifier, c.text});
        std::string raw;
        try {
            raw = backend.rank(w, prompts::render_rerank(query, passages));
        } catch (const std::exception& e) {
            ++out.failures;
            spdlog::warn("rerank: backend failed on window [{}, {}) of \"{}\": {}", start, end, ranked.query_id,
                         e.what());
            continue;
        }
        const auto perm = parse_and_repair(raw, ids);
        std::vector<RankedEntry> reordered;
        reordered.reserve(perm.size());
        for (int ident : perm) reordered.push_back(entries[start + static_cast<std::size_t>(ident - 1)]);
        for (std::size_t k = 0; k < reordered.size(); ++k) entries[start + k].id = std::move(reordered[k].id);
    }
    // Scores stay with positions: the list remains sorted by score.
    for (std::size_t p = 0; p < entries.size(); ++p) entries[p].score = ranked.entries[p].score;
    return out;
}

std::vector<RerankOutcome> rerank_all(std::span<const RerankQuery> queries, const RerankParams& params,
                                      RerankBackend& backend, const CandidateText& text_of,
                                      std::size_t max_in_flight) {
    params.validate();
    std::vector<RerankOutcome> out(queries.size());
    const auto n = static_cast<std::ptrdiff_t>(queries.size());
    const int threads = backend.concurrent() ? static_cast<int>(std::max<std::size_t>(1, max_in_flight)) : 1;
    std::string error;
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (std::ptrdiff_t q = 0; q < n; ++q) {
        try {
            out[q] = sliding_rerank(queries[q].query, queries[q].ranked, params, backend, text_of);
        } catch (const std::exception& e) {
#pragma omp critical(codemine_rerank_error)
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw_data("rerank: {}", error);
    return out;
}

ListwiseResult gen_listwise_data(std::span<const CuratedPair> curated, std::span<const NegativePool> pools,
                                 std::span<const PairRecord> records, RerankBackend& teacher,
                                 const ListwiseParams& params) {
    params.validate();
    std::unordered_map<std::string_view, const PairRecord*> record_of;
    for (const auto& r : records) record_of.emplace(r.id, &r);
    std::unordered_map<std::string_view, const NegativePool*> pool_of;
    for (const auto& p : pools) pool_of.emplace(p.query_id, &p);
    auto lookup = [&](std::string_view id) -> const PairRecord& {
        auto it = record_of.find(id);
        if (it == record_of.end()) throw_data("listwise: no corpus record for \"{}\"", id);
        return *it->second;
    };

    // Tuple selection: best-ranked, most similar positives first.
    ListwiseResult result;
    std::vector<const CuratedPair*> tuples;
    for (const auto& c : curated) {
        if (c.rank > params.max_rank || static_cast<double>(c.s_pos) < params.min_s_pos) continue;
        auto it = pool_of.find(c.query_id);
        const std::size_t available =
            1 + (it == pool_of.end() ? 0 : std::min(params.pool_depth, it->second->entries.size()));
        if (available < params.min_size) {
            ++result.too_small;
            continue;
        }
        tuples.push_back(&c);
    }
    std::sort(tuples.begin(), tuples.end(), [](const CuratedPair* a, const CuratedPair* b) {
        if (a->s_pos != b->s_pos) return a->s_pos > b->s_pos;
        return a->query_id < b->query_id;
    });
    if (tuples.size() > params.max_tuples) tuples.resize(params.max_tuples);

    struct Job {
        const CuratedPair* tuple;
        std::size_t instance;
    };
    std::vector<Job> jobs;
    for (const auto* t : tuples) {
        ++result.tuples;
        for (std::size_t k = 0; k < params.instances_per_tuple; ++k) jobs.push_back({t, k});
    }

    std::vector<std::optional<ListwiseInstance>> slots(jobs.size());
    const auto n = static_cast<std::ptrdiff_t>(jobs.size());
    const int threads = teacher.concurrent() ? 0 : 1;
    std::string error;
#pragma omp parallel for schedule(dynamic, 4) if (threads == 0)
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        try {
            const auto& job = jobs[static_cast<std::size_t>(j)];
            const CuratedPair& t = *job.tuple;
            const NegativePool* pool = pool_of.contains(t.query_id) ? pool_of.at(t.query_id) : nullptr;
            std::vector<std::string> universe{t.positive_id};
            if (pool)
                for (std::size_t e = 0; e < std::min(params.pool_depth, pool->entries.size()); ++e)
                    universe.push_back(pool->entries[e].code_id);

            Rng rng = Rng::keyed(params.seed, t.query_id, job.instance);
            const std::size_t size = rng.between(params.min_size, std::min(params.max_size, universe.size()));
            rng.shuffle(universe);
            universe.resize(size);

            ListwiseInstance inst;
            inst.query_id = t.query_id;
            inst.query = lookup(t.query_id).text;
            Window w{t.query_id, inst.query, {}, 0, size};
            std::vector<int> ids;
            std::vector<prompts::Passage> passages;
            for (std::size_t k = 0; k < size; ++k) {
                const int ident = static_cast<int>(k + 1);
                inst.candidates.push_back({ident, universe[k], lookup(universe[k]).code});
                ids.push_back(ident);
            }
            w.candidates = inst.candidates;
            for (const auto& c : inst.candidates) passages.push_back({c.identifier, c.text});
            std::string raw;
            try {
                raw = teacher.rank(w, prompts::render_rerank(inst.query, passages));
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::backend) throw;
                spdlog::warn("listwise: teacher failed on \"{}\" #{}: {}", t.query_id, job.instance, e.what());
                continue;
            }
            inst.teacher_ranking = parse_and_repair(raw, ids);
            slots[static_cast<std::size_t>(j)] = std::move(inst);
        } catch (const std::exception& e) {
#pragma omp critical(codemine_listwise_error)
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw_data("listwise: {}", error);
    for (auto& s : slots) {
        if (s)
            result.instances.push_back(std::move(*s));
        else
            ++result.skipped;
    }
    return result;
}

void write_instances(const fs::path& path, std::span<const ListwiseInstance> instances) {
    JsonlWriter w(path);
    for (const auto& inst : instances) {
        json cands = json::array();
        for (const auto& c : inst.candidates)
            cands.push_back({{"identifier", c.identifier}, {"candidate_id", c.candidate_id}, {"text", c.text}});
        w.write({{"query_id", inst.query_id},
                 {"query", inst.query},
                 {"candidates", cands},
                 {"teacher_ranking", inst.teacher_ranking},
                 {"prompt_version", prompts::kRerankVersion}});
    }
}

std::vector<ListwiseInstance> read_instances(const fs::path& path) {
    std::vector<ListwiseInstance> out;
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        ListwiseInstance inst;
        inst.query_id = optional_string(j, "query_id");
        inst.query = require_string(j, "query", line_no);
        for (const auto& c : j.at("candidates"))
            inst.candidates.push_back(
                {c.at("identifier").get<int>(), optional_string(c, "candidate_id"), require_string(c, "text", line_no)});
        inst.teacher_ranking = j.at("teacher_ranking").get<std::vector<int>>();
        out.push_back(std::move(inst));
    });
    return out;
}

}  // namespace codemine
