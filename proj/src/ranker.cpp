#include "codemine/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "codemine/simgraph.hpp"

namespace codemine {

RankedList search(const VectorStore& index, std::span<const float> query, std::size_t k, std::string query_id) {
    if (query.size() != index.dim())
        throw_data("search: query dimension {} does not match index dimension {}", query.size(), index.dim());
    if (k < 1) throw_usage("search: k must be at least 1");
    const std::size_t n = index.size();
    std::vector<float> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = dot_score(query, index.row(i));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t keep = std::min(k, n);
    auto before = [&](std::size_t a, std::size_t b) { return ranks_before(scores[a], index.id(a), scores[b], index.id(b)); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
    RankedList out{std::move(query_id), {}};
    out.entries.reserve(keep);
    for (std::size_t r = 0; r < keep; ++r) out.entries.push_back({index.id(order[r]), scores[order[r]]});
    return out;
}

std::vector<RankedList> search_batch(const VectorStore& index, const VectorStore& queries, std::size_t k) {
    if (queries.dim() != index.dim())
        throw_data("search: query dimension {} does not match index dimension {}", queries.dim(), index.dim());
    std::vector<RankedList> out(queries.size());
    const auto n = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t q = 0; q < n; ++q) out[q] = search(index, queries.row(q), k, queries.id(q));
    return out;
}

std::string MetricSpec::name() const {
    switch (kind) {
        case MetricKind::mrr: return fmt::format("MRR@{}", k);
        case MetricKind::ndcg: return fmt::format("nDCG@{}", k);
        case MetricKind::recall: return fmt::format("Recall@{}", k);
    }
    return {};
}

MetricSpec MetricSpec::parse(std::string_view s) {
    auto at = s.find('@');
    if (at == std::string_view::npos) throw_usage("metric \"{}\" must look like MRR@10", s);
    std::string kind(s.substr(0, at));
    for (auto& c : kind) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    MetricSpec spec;
    if (kind == "mrr")
        spec.kind = MetricKind::mrr;
    else if (kind == "ndcg")
        spec.kind = MetricKind::ndcg;
    else if (kind == "recall")
        spec.kind = MetricKind::recall;
    else
        throw_usage("unknown metric \"{}\"", kind);
    try {
        spec.k = std::stoul(std::string(s.substr(at + 1)));
    } catch (const std::exception&) {
        throw_usage("bad cutoff in metric \"{}\"", s);
    }
    if (spec.k < 1) throw_usage("metric cutoff must be at least 1");
    return spec;
}

MetricReport compute_metrics(std::span<const RankedList> runs, const Qrels& qrels, const MetricSpec& spec) {
    MetricReport report;
    report.metric = spec.name();
    static const std::set<std::string> kEmpty;
    for (const auto& run : runs) {
        std::unordered_set<std::string_view> seen;
        for (const auto& e : run.entries)
            if (!seen.insert(e.id).second)
                throw_data("corrupt run: candidate \"{}\" appears twice for query \"{}\"", e.id, run.query_id);
        if (report.per_query.contains(run.query_id))
            throw_data("corrupt run: query \"{}\" appears twice", run.query_id);

        auto it = qrels.find(run.query_id);
        const auto& relevant = it == qrels.end() ? kEmpty : it->second;
        if (relevant.empty()) {
            report.per_query[run.query_id] = 0.0;
            report.flagged.push_back(run.query_id);
            continue;
        }
        const std::size_t depth = std::min(spec.k, run.entries.size());
        double value = 0.0;
        switch (spec.kind) {
            case MetricKind::mrr:
                for (std::size_t r = 0; r < depth; ++r)
                    if (relevant.contains(run.entries[r].id)) {
                        value = 1.0 / static_cast<double>(r + 1);
                        break;
                    }
                break;
            case MetricKind::ndcg: {
                double dcg = 0.0;
                for (std::size_t r = 0; r < depth; ++r)
                    if (relevant.contains(run.entries[r].id)) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
                double ideal = 0.0;
                for (std::size_t r = 0; r < std::min(spec.k, relevant.size()); ++r)
                    ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
                value = dcg / ideal;
                break;
            }
            case MetricKind::recall: {
                std::size_t hits = 0;
                for (std::size_t r = 0; r < depth; ++r) hits += relevant.contains(run.entries[r].id);
                value = static_cast<double>(hits) / static_cast<double>(relevant.size());
                break;
            }
        }
        report.per_query[run.query_id] = value;
    }
    if (!report.per_query.empty()) {
        double sum = 0.0;
        for (const auto& [q, v] : report.per_query) sum += v;
        report.mean = sum / static_cast<double>(report.per_query.size());
    }
    return report;
}

void write_run(const fs::path& path, std::span<const RankedList> runs, std::string_view tag) {
    std::string out;
    for (const auto& run : runs)
        for (std::size_t r = 0; r < run.entries.size(); ++r)
            out += fmt::format("{} Q0 {} {} {} {}\n", run.query_id, run.entries[r].id, r + 1,
                               json(run.entries[r].score).dump(), tag);
    write_text_file(path, out);
}

std::vector<RankedList> read_run(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw_data("cannot open {}", path.string());
    std::vector<RankedList> runs;
    std::map<std::string, std::size_t> index;
    std::vector<std::vector<std::pair<std::size_t, RankedEntry>>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::vector<std::string> f;
        for (std::string tok; ss >> tok;) f.push_back(tok);
        if (f.empty()) continue;
        if (f.size() == 5) f.insert(f.begin() + 1, "Q0");
        if (f.size() != 6) throw_data("{}:{}: expected 5 or 6 columns, got {}", path.string(), line_no, f.size());
        auto [it, inserted] = index.emplace(f[0], runs.size());
        if (inserted) {
            runs.push_back({f[0], {}});
            rows.emplace_back();
        }
        try {
            rows[it->second].push_back({std::stoul(f[3]), {f[2], std::stof(f[4])}});
        } catch (const std::exception&) {
            throw_data("{}:{}: bad rank or score", path.string(), line_no);
        }
    }
    for (std::size_t q = 0; q < runs.size(); ++q) {
        std::stable_sort(rows[q].begin(), rows[q].end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto& [rank, e] : rows[q]) runs[q].entries.push_back(std::move(e));
    }
    return runs;
}

void write_qrels(const fs::path& path, const Qrels& qrels) {
    std::string out;
    for (const auto& [q, ids] : qrels)
        for (const auto& id : ids) out += fmt::format("{} 0 {} 1\n", q, id);
    write_text_file(path, out);
}

Qrels read_qrels(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw_data("cannot open {}", path.string());
    Qrels qrels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::vector<std::string> f;
        for (std::string tok; ss >> tok;) f.push_back(tok);
        if (f.empty()) continue;
        if (f.size() == 3) f.insert(f.begin() + 1, "0");
        if (f.size() != 4) throw_data("{}:{}: expected 3 or 4 columns, got {}", path.string(), line_no, f.size());
        auto& set = qrels[f[0]];
        if (f[3] != "0" && f[3] != "1")
            throw_data("{}:{}: relevance must be 0 or 1, got {}", path.string(), line_no, f[3]);
        if (f[3] == "1") set.insert(f[2]);
    }
    return qrels;
}

}  // namespace codemine
