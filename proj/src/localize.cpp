#include "codemine/localize.hpp"

#include <algorithm>
#include <unordered_set>

#include <fmt/format.h>

namespace codemine {

std::string FunctionRecord::candidate_text() const { return docstring + "\n" + body; }

std::vector<FunctionRecord> read_snapshot(const fs::path& path) {
    std::vector<FunctionRecord> out;
    std::unordered_set<std::string> seen;
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        FunctionRecord f;
        f.function_id = require_string(j, "function_id", line_no);
        f.file_path = require_string(j, "file_path", line_no);
        f.name = optional_string(j, "name");
        f.docstring = optional_string(j, "docstring");
        f.body = require_string(j, "body", line_no);
        f.instance_id = optional_string(j, "instance_id");
        if (!seen.insert(f.instance_id + '\x1f' + f.function_id).second)
            throw_data("{}:{}: duplicate function_id \"{}\"", path.string(), line_no, f.function_id);
        out.push_back(std::move(f));
    });
    return out;
}

void write_snapshot(const fs::path& path, std::span<const FunctionRecord> functions) {
    JsonlWriter w(path);
    for (const auto& f : functions) {
        json j{{"function_id", f.function_id},
               {"file_path", f.file_path},
               {"name", f.name},
               {"docstring", f.docstring},
               {"body", f.body}};
        if (!f.instance_id.empty()) j["instance_id"] = f.instance_id;
        w.write(j);
    }
}

std::vector<GoldLabels> read_gold(const fs::path& path) {
    std::vector<GoldLabels> out;
    read_jsonl(path, [&](const json& j, std::size_t line_no) {
        GoldLabels g;
        g.instance_id = require_string(j, "instance_id", line_no);
        g.issue = require_string(j, "issue", line_no);
        if (!j.contains("gold_function_ids") || !j["gold_function_ids"].is_array())
            throw_data("line {}: missing required field \"gold_function_ids\"", line_no);
        for (const auto& id : j["gold_function_ids"]) g.gold_functions.insert(id.get<std::string>());
        if (j.contains("gold_files"))
            for (const auto& f : j["gold_files"]) g.gold_files.insert(f.get<std::string>());
        out.push_back(std::move(g));
    });
    return out;
}

void write_gold(const fs::path& path, std::span<const GoldLabels> gold) {
    JsonlWriter w(path);
    for (const auto& g : gold)
        w.write({{"instance_id", g.instance_id},
                 {"issue", g.issue},
                 {"gold_function_ids", g.gold_functions},
                 {"gold_files", g.gold_files}});
}

std::vector<FunctionRecord> snapshot_for(std::span<const FunctionRecord> all, const std::string& instance_id) {
    std::vector<FunctionRecord> out;
    for (const auto& f : all)
        if (f.instance_id.empty() || f.instance_id == instance_id) out.push_back(f);
    return out;
}

VectorStore embed_snapshot(std::span<const FunctionRecord> snapshot, EmbeddingProvider& provider) {
    std::vector<std::string> ids, texts;
    ids.reserve(snapshot.size());
    texts.reserve(snapshot.size());
    for (const auto& f : snapshot) {
        ids.push_back(f.function_id);
        texts.push_back(f.candidate_text());
    }
    return embed_strings(ids, texts, provider, Side::code);
}

RankedList localize(const std::string& instance_id, const std::string& issue,
                    std::span<const FunctionRecord> snapshot, const VectorStore& index,
                    EmbeddingProvider& provider, RerankBackend* reranker, const LocalizeParams& params) {
    if (snapshot.empty() || index.size() == 0) throw_data("localize: empty snapshot for instance \"{}\"", instance_id);
    if (issue.empty()) throw_data("localize: empty issue text for instance \"{}\"", instance_id);
    const std::string texts[] = {issue};
    auto vecs = provider.embed(texts);
    if (vecs.size() != 1) throw_backend("localize: provider returned {} vectors for 1 issue", vecs.size());
    if (vecs[0].size() != index.dim())
        throw_backend("localize: issue vector has dimension {}, snapshot store has {}", vecs[0].size(), index.dim());
    if (!(normalize(vecs[0]) > 0.0)) throw_data("localize: issue \"{}\" embeds to the zero vector", instance_id);

    RankedList ranked = search(index, vecs[0], params.retrieve_depth, instance_id);
    if (!reranker) return ranked;
    std::unordered_map<std::string, const FunctionRecord*> by_id;
    for (const auto& f : snapshot) by_id.emplace(f.function_id, &f);
    CandidateText text_of = [&](const std::string& id) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw_data("localize: function \"{}\" is not in the snapshot", id);
        return it->second->candidate_text();
    };
    return sliding_rerank(issue, ranked, params.rerank, *reranker, text_of).list;
}

std::vector<std::string> file_rollup(const RankedList& ranked,
                                     const std::unordered_map<std::string, std::string>& file_of) {
    std::vector<std::string> files;
    std::unordered_set<std::string> seen;
    for (const auto& e : ranked.entries) {
        auto it = file_of.find(e.id);
        if (it == file_of.end()) throw_data("file rollup: function \"{}\" has no file path", e.id);
        if (seen.insert(it->second).second) files.push_back(it->second);
    }
    return files;
}

std::string_view to_string(HitMode m) { return m == HitMode::any ? "any" : "complete"; }

namespace {

// any: some gold item is in the top k; complete: every gold item is.
std::pair<bool, bool> hits_at(std::span<const std::string> ranked, const std::set<std::string>& gold, std::size_t k) {
    std::size_t found = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) found += gold.contains(ranked[r]);
    return {found > 0, !gold.empty() && found == gold.size()};
}

}  // namespace

LocalizationReport eval_localization(std::span<const RankedList> predictions, std::span<const GoldLabels> gold,
                                     const std::unordered_map<std::string, std::string>& file_of,
                                     std::vector<std::size_t> file_ks, std::vector<std::size_t> function_ks) {
    LocalizationReport report;
    std::sort(file_ks.begin(), file_ks.end());
    std::sort(function_ks.begin(), function_ks.end());
    report.file_ks = file_ks;
    report.function_ks = function_ks;
    if (gold.empty()) throw_data("localization eval: no gold instances");

    std::unordered_map<std::string, const RankedList*> pred_of;
    for (const auto& p : predictions)
        if (!pred_of.emplace(p.query_id, &p).second)
            throw_data("localization eval: instance \"{}\" has two prediction lists", p.query_id);

    for (const auto& g : gold) {
        auto pit = pred_of.find(g.instance_id);
        if (pit == pred_of.end()) throw_data("localization eval: no predictions for instance \"{}\"", g.instance_id);
        std::set<std::string> gold_files = g.gold_files;
        for (const auto& fid : g.gold_functions) {
            auto fit = file_of.find(fid);
            if (fit == file_of.end())
                throw_data("localization eval: gold function \"{}\" of instance \"{}\" is not in the snapshot", fid,
                           g.instance_id);
            gold_files.insert(fit->second);
        }
        if (gold_files.empty() && g.gold_functions.empty())
            throw_data("localization eval: instance \"{}\" has no gold labels", g.instance_id);

        std::vector<std::string> functions;
        for (const auto& e : pit->second->entries) functions.push_back(e.id);
        const std::vector<std::string> files = file_rollup(*pit->second, file_of);

        InstanceHits h{g.instance_id, {}, {}, {}, {}};
        for (auto k : file_ks) std::tie(h.file_any[k], h.file_complete[k]) = hits_at(files, gold_files, k);
        for (auto k : function_ks)
            std::tie(h.function_any[k], h.function_complete[k]) = hits_at(functions, g.gold_functions, k);
        report.instances.push_back(std::move(h));
    }

    const double n = static_cast<double>(report.instances.size());
    auto mean = [&](auto member, std::size_t k) {
        double s = 0.0;
        for (const auto& h : report.instances) s += (h.*member).at(k) ? 1.0 : 0.0;
        return s / n;
    };
    for (auto k : file_ks) {
        report.file_any[k] = mean(&InstanceHits::file_any, k);
        report.file_complete[k] = mean(&InstanceHits::file_complete, k);
    }
    for (auto k : function_ks) {
        report.function_any[k] = mean(&InstanceHits::function_any, k);
        report.function_complete[k] = mean(&InstanceHits::function_complete, k);
    }
    return report;
}

std::string LocalizationReport::to_table() const {
    std::string head = fmt::format("{:<10}", "mode");
    for (auto k : file_ks) head += fmt::format(" {:>8}", fmt::format("File@{}", k));
    for (auto k : function_ks) head += fmt::format(" {:>8}", fmt::format("Func@{}", k));
    std::string out = head + "\n";
    for (HitMode m : {HitMode::any, HitMode::complete}) {
        const auto& files = m == HitMode::any ? file_any : file_complete;
        const auto& fns = m == HitMode::any ? function_any : function_complete;
        std::string row = fmt::format("{:<10}", std::string(to_string(m)) + (m == primary_mode ? "*" : ""));
        for (auto k : file_ks) row += fmt::format(" {:>8.1f}", 100.0 * files.at(k));
        for (auto k : function_ks) row += fmt::format(" {:>8.1f}", 100.0 * fns.at(k));
        out += row + "\n";
    }
    out += fmt::format("instances: {} (* = primary mode, values in %)\n", instances.size());
    return out;
}

json LocalizationReport::to_json() const {
    auto as_obj = [](const std::map<std::size_t, double>& m) {
        json o = json::object();
        for (const auto& [k, v] : m) o[std::to_string(k)] = v;
        return o;
    };
    json per = json::array();
    for (const auto& h : instances) {
        json hj{{"instance_id", h.instance_id}};
        auto hits = [](const std::map<std::size_t, bool>& m) {
            json o = json::object();
            for (const auto& [k, v] : m) o[std::to_string(k)] = v;
            return o;
        };
        hj["file_any"] = hits(h.file_any);
        hj["file_complete"] = hits(h.file_complete);
        hj["function_any"] = hits(h.function_any);
        hj["function_complete"] = hits(h.function_complete);
        per.push_back(hj);
    }
    return {{"primary_mode", to_string(primary_mode)},
            {"any", {{"file", as_obj(file_any)}, {"function", as_obj(function_any)}}},
            {"complete", {{"file", as_obj(file_complete)}, {"function", as_obj(function_complete)}}},
            {"instances", per}};
}

}  // namespace codemine
