#include "codemine/pipeline.hpp"

#include <map>
#include <set>
#include <unordered_map>

#include <omp.h>
#include <spdlog/spdlog.h>

#include "codemine/backends.hpp"
#include "codemine/ranker.hpp"
#include "codemine/sampler.hpp"

namespace codemine {

namespace {

const std::vector<std::string> kStages{"ingest", "embed",        "neighbors", "filter",   "mine",
                                       "sample", "train-toy",    "retrieve",  "rerank",   "gen-listwise",
                                       "localize", "eval",       "audit"};

const std::vector<ArtifactInfo> kArtifacts{
    {"corpus.jsonl", "ingest"},         {"decisions.jsonl", "ingest"},  {"stats.txt", "ingest"},
    {"stats.json", "ingest"},           {"text.store", "embed"},        {"code.store", "embed"},
    {"cache.jsonl", "neighbors"},       {"cache.bin", "neighbors"},     {"curated.jsonl", "filter"},
    {"filter_outcomes.jsonl", "filter"}, {"filter_summary.json", "filter"}, {"pools.jsonl", "mine"},
    {"batches.jsonl", "sample"},        {"toy_trace.jsonl", "train-toy"}, {"run.trec", "retrieve"},
    {"qrels.trec", "retrieve"},         {"reranked.trec", "rerank"},    {"listwise.jsonl", "gen-listwise"},
    {"localize.trec", "localize"},      {"metrics.txt", "eval"},        {"metrics.json", "eval"},
    {"metrics_reranked.txt", "eval"},   {"metrics_reranked.json", "eval"}, {"localization.txt", "eval"},
    {"localization.json", "eval"},      {"audit.txt", "audit"},         {"audit.json", "audit"},
};

std::string producer_of(const std::string& file) {
    for (const auto& a : kArtifacts)
        if (a.file == file) return a.stage;
    return {};
}

// Reads, writes and checks the per-stage lineage records kept in
// <workdir>/meta/<stage>.json.
class StageRun {
public:
    StageRun(std::string stage, const PipelineConfig& cfg) : stage_(std::move(stage)), cfg_(cfg), dir_(cfg.workdir) {}

    // An artifact written by an earlier stage. Verifies it is present and
    // current, then records its hash as an input of this stage.
    fs::path need(const std::string& file) {
        const fs::path p = dir_ / file;
        const std::string stage = producer_of(file);
        if (!fs::exists(p)) throw_data("missing {}; run `codemine {}` first", p.string(), stage);
        const std::string hash = hex64(hash_file(p));
        const fs::path meta = meta_path(stage);
        if (fs::exists(meta)) {
            const json m = json::parse(read_text_file(meta));
            if (!m["outputs"].contains(file) || m["outputs"][file] != hash)
                throw_data("{} was modified after `{}` wrote it; rerun `codemine {}`", p.string(), stage, stage);
            for (const auto& [name, recorded] : m["inputs"].items()) {
                const fs::path up = resolve(name);
                if (!fs::exists(up) || hex64(hash_file(up)) != recorded.get<std::string>())
                    throw_data("{} is stale because its input {} changed; rerun `codemine {}`", p.string(), name,
                               stage);
            }
        } else {
            spdlog::warn("{} has no lineage record; continuing without a staleness check", p.string());
        }
        inputs_[file] = hash;
        return p;
    }

    // A user-supplied file outside the working directory.
    fs::path external(const std::string& path, std::string_view what) {
        if (path.empty()) throw_usage("{}: --{} is required", stage_, what);
        if (!fs::exists(path)) throw_data("{} file {} does not exist", what, path);
        inputs_[path] = hex64(hash_file(path));
        return path;
    }

    // Either a working-directory artifact or an override path.
    fs::path need_or(const std::string& override_path, const std::string& file, std::string_view what) {
        return override_path.empty() ? need(file) : external(override_path, what);
    }

    fs::path output(const std::string& file) {
        const fs::path p = dir_ / file;
        if (fs::exists(p) && !cfg_.force) throw_usage("{} already exists; pass --force to overwrite", p.string());
        outputs_.push_back(file);
        return p;
    }

    void commit() const {
        json m;
        m["stage"] = stage_;
        m["seed"] = cfg_.seed;
        json config = cfg_.to_json();
        config.erase("workdir");
        config.erase("force");
        config.erase("threads");
        m["config"] = config;
        m["inputs"] = inputs_;
        json outs = json::object();
        for (const auto& f : outputs_) outs[f] = hex64(hash_file(dir_ / f));
        m["outputs"] = outs;
        fs::create_directories(dir_ / "meta");
        write_text_file(meta_path(stage_), m.dump(2) + "\n");
        for (const auto& f : outputs_) spdlog::info("wrote {}", (dir_ / f).string());
    }

private:
    fs::path meta_path(const std::string& stage) const { return dir_ / "meta" / (stage + ".json"); }
    fs::path resolve(const std::string& name) const {
        return producer_of(name).empty() ? fs::path(name) : dir_ / name;
    }

    std::string stage_;
    const PipelineConfig& cfg_;
    fs::path dir_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> outputs_;
};

std::vector<PairRecord> load_corpus(const fs::path& path) { return ingest_pairs(path, "").records; }

std::string cache_file(const PipelineConfig& cfg) { return cfg.binary_cache ? "cache.bin" : "cache.jsonl"; }

NeighborParams neighbor_params(const PipelineConfig& cfg) {
    NeighborParams np = cfg.neighbors;
    np.required_min = std::max(cfg.filter.k, cfg.mining.pool_size + 1);
    return np;
}

void stage_ingest(const PipelineConfig& cfg) {
    StageRun s("ingest", cfg);
    const fs::path in = s.external(cfg.pairs, "pairs");
    const auto out_corpus = s.output("corpus.jsonl");
    const auto out_decisions = s.output("decisions.jsonl");
    const auto out_stats_txt = s.output("stats.txt");
    const auto out_stats_json = s.output("stats.json");
    Corpus corpus = ingest_pairs(in, cfg.language);
    apply_prefilter(corpus, cfg.prefilter);
    write_corpus(out_corpus, corpus.records);
    write_decisions(out_decisions, corpus.decisions);
    write_text_file(out_stats_txt, corpus.stats.to_table());
    write_text_file(out_stats_json, corpus.stats.to_json().dump(2) + "\n");
    spdlog::info("ingest: {} records kept\n{}", corpus.records.size(), corpus.stats.to_table());
    s.commit();
}

void stage_embed(const PipelineConfig& cfg) {
    StageRun s("embed", cfg);
    const auto records = load_corpus(s.need("corpus.jsonl"));
    const auto out_text = s.output("text.store");
    const auto out_code = s.output("code.store");
    auto provider = make_embedding_provider(cfg.provider, cfg.stub_dim);
    EmbedOptions opts = cfg.embed;
    opts.checkpoint = fs::path(cfg.workdir) / "text.ckpt.jsonl";
    const VectorStore texts = embed_corpus(records, *provider, Side::text, opts);
    opts.checkpoint = fs::path(cfg.workdir) / "code.ckpt.jsonl";
    const VectorStore codes = embed_corpus(records, *provider, Side::code, opts);
    texts.save(out_text);
    codes.save(out_code);
    spdlog::info("embed: {} texts and {} codes at d={} via {}", texts.size(), codes.size(), texts.dim(),
                 provider->identity());
    s.commit();
}

void stage_neighbors(const PipelineConfig& cfg) {
    StageRun s("neighbors", cfg);
    const auto texts = VectorStore::load(s.need("text.store"));
    const auto codes = VectorStore::load(s.need("code.store"));
    const auto out = s.output(cache_file(cfg));
    const SimilarityCache cache = compute_neighbors(texts, codes, neighbor_params(cfg));
    cache.save(out);
    spdlog::info("neighbors: {} rows, K'={}", cache.rows.size(), cache.k_prime);
    s.commit();
}

void stage_filter(const PipelineConfig& cfg) {
    StageRun s("filter", cfg);
    const auto records = load_corpus(s.need("corpus.jsonl"));
    const auto cache = SimilarityCache::load(s.need(cache_file(cfg)));
    const auto out_curated = s.output("curated.jsonl");
    const auto out_outcomes = s.output("filter_outcomes.jsonl");
    const auto out_summary = s.output("filter_summary.json");
    std::vector<std::string> ids;
    for (const auto& r : records) ids.push_back(r.id);
    const FilterResult result = consistency_filter(cache, cfg.filter, ids);
    write_curated(out_curated, result.curated);
    write_filter_outcomes(out_outcomes, result.outcomes);
    json summary{{"k", cfg.filter.k},
                 {"delta", cfg.filter.delta},
                 {"rows", result.outcomes.size()},
                 {"kept", result.curated.size()},
                 {"reasons", result.reason_counts}};
    write_text_file(out_summary, summary.dump(2) + "\n");
    std::string table = fmt::format("{:<16} {:>8}\n", "reason", "count");
    for (const auto& [reason, n] : result.reason_counts) table += fmt::format("{:<16} {:>8}\n", reason, n);
    spdlog::info("filter: kept {} of {} pairs (k={}, delta={})\n{}", result.curated.size(), result.outcomes.size(),
                 cfg.filter.k, cfg.filter.delta, table);
    s.commit();
}

void stage_mine(const PipelineConfig& cfg) {
    StageRun s("mine", cfg);
    const auto texts = VectorStore::load(s.need("text.store"));
    const auto codes = VectorStore::load(s.need("code.store"));
    const auto cache = SimilarityCache::load(s.need(cache_file(cfg)));
    const auto curated = read_curated(s.need("curated.jsonl"));
    const auto out = s.output("pools.jsonl");
    MiningParams mp = cfg.mining;
    mp.seed = cfg.seed;
    const auto pools = build_negative_pools(cache, curated, mp, store_scores(texts, codes, cache));
    write_pools(out, pools);
    std::size_t fallback = 0, entries = 0;
    for (const auto& p : pools) {
        fallback += p.fallback_used;
        entries += p.entries.size();
    }
    spdlog::info("mine: {} pools, {} entries, {} used the fallback (gamma={}, P={})", pools.size(), entries, fallback,
                 mp.gamma, mp.pool_size);
    s.commit();
}

void stage_sample(const PipelineConfig& cfg) {
    StageRun s("sample", cfg);
    const auto curated = read_curated(s.need("curated.jsonl"));
    const auto pools = read_pools(s.need("pools.jsonl"));
    const auto out = s.output("batches.jsonl");
    const CurriculumSchedule schedule{cfg.tau_start, cfg.tau_end, cfg.steps};
    const auto batches = emit_batches(curated, pools, schedule, cfg.batch_size, cfg.negatives, cfg.seed);
    write_batches(out, batches);
    spdlog::info("sample: {} batches of N={} with M={} negatives ({} contrastive negatives per positive)",
                 batches.size(), cfg.batch_size, cfg.negatives,
                 contrastive_negatives_per_positive(cfg.batch_size, cfg.negatives));
    s.commit();
}

void stage_train_toy(const PipelineConfig& cfg) {
    StageRun s("train-toy", cfg);
    const auto records = load_corpus(s.need("corpus.jsonl"));
    const auto curated = read_curated(s.need("curated.jsonl"));
    const auto pools = read_pools(s.need("pools.jsonl"));
    const auto out = s.output("toy_trace.jsonl");
    if (cfg.heldout_every < 2) throw_usage("train-toy: heldout-every must be at least 2");
    std::vector<CuratedPair> train;
    std::vector<std::string> heldout;
    std::set<std::string> train_ids;
    for (std::size_t i = 0; i < curated.size(); ++i) {
        if (i % cfg.heldout_every == 0) {
            heldout.push_back(curated[i].query_id);
        } else {
            train.push_back(curated[i]);
            train_ids.insert(curated[i].query_id);
        }
    }
    std::vector<NegativePool> train_pools;
    for (const auto& p : pools)
        if (train_ids.contains(p.query_id)) train_pools.push_back(p);
    ToyConfig tc = cfg.toy;
    tc.seed = cfg.seed;
    const ToyTrace trace =
        train_toy(make_toy_data(records, std::move(train), std::move(train_pools), heldout, tc.feature_dim), tc);
    trace.write(out);
    spdlog::info("train-toy: held-out MRR@{} {:.4f} -> {:.4f} over {} steps", tc.eval_k, trace.evals.front().mrr,
                 trace.final_mrr(), tc.steps);
    s.commit();
}

void stage_retrieve(const PipelineConfig& cfg) {
    StageRun s("retrieve", cfg);
    const auto texts = VectorStore::load(s.need("text.store"));
    const auto codes = VectorStore::load(s.need("code.store"));
    const auto out_run = s.output("run.trec");
    const auto out_qrels = s.output("qrels.trec");
    const auto runs = search_batch(codes, texts, cfg.topk);
    Qrels qrels;
    for (const auto& id : texts.ids())
        if (codes.find(id)) qrels[id].insert(id);
    write_run(out_run, runs, "codemine-dense");
    write_qrels(out_qrels, qrels);
    spdlog::info("retrieve: {} queries, top {}", runs.size(), cfg.topk);
    s.commit();
}

std::unordered_map<std::string, const PairRecord*> index_records(const std::vector<PairRecord>& records) {
    std::unordered_map<std::string, const PairRecord*> out;
    for (const auto& r : records) out.emplace(r.id, &r);
    return out;
}

void stage_rerank(const PipelineConfig& cfg) {
    StageRun s("rerank", cfg);
    const auto records = load_corpus(s.need("corpus.jsonl"));
    const auto runs = read_run(s.need("run.trec"));
    const auto out = s.output("reranked.trec");
    const auto by_id = index_records(records);
    auto lookup = [&](const std::string& id) -> const PairRecord& {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw_data("rerank: \"{}\" is not in the corpus", id);
        return *it->second;
    };
    std::vector<RerankQuery> queries;
    for (const auto& r : runs) queries.push_back({lookup(r.query_id).text, r});
    auto backend = make_rerank_backend(cfg.reranker, cfg.stub_dim);
    const CandidateText text_of = [&](const std::string& id) { return lookup(id).code; };
    const auto outcomes = rerank_all(queries, cfg.rerank, *backend, text_of, cfg.max_in_flight);
    std::vector<RankedList> reranked;
    std::size_t windows = 0, failures = 0;
    for (const auto& o : outcomes) {
        reranked.push_back(o.list);
        windows += o.windows;
        failures += o.failures;
    }
    write_run(out, reranked, "codemine-rerank");
    spdlog::info("rerank: {} queries, {} windows, {} failed windows, backend {}", reranked.size(), windows, failures,
                 backend->identity());
    s.commit();
}

void stage_gen_listwise(const PipelineConfig& cfg) {
    StageRun s("gen-listwise", cfg);
    const auto records = load_corpus(s.need("corpus.jsonl"));
    const auto curated = read_curated(s.need("curated.jsonl"));
    const auto pools = read_pools(s.need("pools.jsonl"));
    const auto out = s.output("listwise.jsonl");
    auto teacher = make_rerank_backend(cfg.teacher, cfg.stub_dim);
    ListwiseParams lp = cfg.listwise;
    lp.seed = cfg.seed;
    const auto result = gen_listwise_data(curated, pools, records, *teacher, lp);
    write_instances(out, result.instances);
    spdlog::info("gen-listwise: {} tuples -> {} instances ({} teacher failures, {} tuples too small), teacher {}",
                 result.tuples, result.instances.size(), result.skipped, result.too_small, teacher->identity());
    s.commit();
}

void stage_localize(const PipelineConfig& cfg) {
    StageRun s("localize", cfg);
    const auto functions = read_snapshot(s.external(cfg.snapshot, "snapshot"));
    const auto gold = read_gold(s.external(cfg.gold, "gold"));
    const auto out = s.output("localize.trec");
    auto provider = make_embedding_provider(cfg.provider, cfg.stub_dim);
    std::unique_ptr<RerankBackend> reranker;
    if (cfg.localize_rerank) reranker = make_rerank_backend(cfg.reranker, cfg.stub_dim);
    std::vector<RankedList> runs;
    for (const auto& g : gold) {
        const auto snap = snapshot_for(functions, g.instance_id);
        if (snap.empty()) throw_data("localize: empty snapshot for instance \"{}\"", g.instance_id);
        const VectorStore index = embed_snapshot(snap, *provider);
        runs.push_back(localize(g.instance_id, g.issue, snap, index, *provider, reranker.get(), cfg.localize));
    }
    write_run(out, runs, reranker ? "codemine-localize-rerank" : "codemine-localize");
    spdlog::info("localize: {} instances", runs.size());
    s.commit();
}

void stage_eval(const PipelineConfig& cfg) {
    StageRun s("eval", cfg);
    if (cfg.eval_localization) {
        const auto runs = read_run(s.need_or(cfg.run_file, "localize.trec", "run-file"));
        const auto functions = read_snapshot(s.external(cfg.snapshot, "snapshot"));
        const auto gold = read_gold(s.external(cfg.gold, "gold"));
        const auto out_txt = s.output("localization.txt");
        const auto out_json = s.output("localization.json");
        std::unordered_map<std::string, std::string> file_of;
        for (const auto& f : functions) file_of[f.function_id] = f.file_path;
        const auto report = eval_localization(runs, gold, file_of);
        write_text_file(out_txt, report.to_table());
        write_text_file(out_json, report.to_json().dump(2) + "\n");
        spdlog::info("eval (localization):\n{}", report.to_table());
        s.commit();
        return;
    }
    const std::string run_name = cfg.eval_reranked ? "reranked.trec" : "run.trec";
    const auto runs = read_run(s.need_or(cfg.run_file, run_name, "run-file"));
    const auto qrels = read_qrels(s.need_or(cfg.qrels_file, "qrels.trec", "qrels-file"));
    const std::string stem = cfg.eval_reranked ? "metrics_reranked" : "metrics";
    const auto out_txt = s.output(stem + ".txt");
    const auto out_json = s.output(stem + ".json");
    std::string table = fmt::format("{:<14} {:>10} {:>8}\n", "metric", "mean", "queries");
    json j = json::object();
    for (const auto& name : cfg.metrics) {
        const auto spec = MetricSpec::parse(name);
        const auto report = compute_metrics(runs, qrels, spec);
        table += fmt::format("{:<14} {:>10.4f} {:>8}\n", report.metric, report.mean, report.per_query.size());
        j[report.metric] = {{"mean", report.mean}, {"queries", report.per_query.size()}, {"flagged", report.flagged}};
        if (!report.flagged.empty())
            spdlog::warn("eval: {} queries have no relevant candidates and score 0", report.flagged.size());
    }
    write_text_file(out_txt, table);
    write_text_file(out_json, j.dump(2) + "\n");
    spdlog::info("eval:\n{}", table);
    s.commit();
}

void stage_audit(const PipelineConfig& cfg) {
    StageRun s("audit", cfg);
    const auto records = load_corpus(s.need("corpus.jsonl"));
    const auto out_txt = s.output("audit.txt");
    const auto out_json = s.output("audit.json");
    auto judge = make_judge_backend(cfg.judge, cfg.stub_dim, cfg.judge_threshold);
    AuditParams ap = cfg.audit;
    ap.base_seed = cfg.seed;
    const auto report = audit_pairs(records, *judge, ap);
    write_text_file(out_txt, report.to_table());
    write_text_file(out_json, report.to_json().dump(2) + "\n");
    spdlog::info("audit ({}):\n{}", judge->identity(), report.to_table());
    s.commit();
}

}  // namespace

json PipelineConfig::to_json() const {
    return {
        {"workdir", workdir},
        {"pairs", pairs},
        {"language", language},
        {"snapshot", snapshot},
        {"gold", gold},
        {"run_file", run_file},
        {"qrels_file", qrels_file},
        {"eval_localization", eval_localization},
        {"eval_reranked", eval_reranked},
        {"provider", provider},
        {"reranker", reranker},
        {"teacher", teacher},
        {"judge", judge},
        {"stub_dim", stub_dim},
        {"judge_threshold", judge_threshold},
        {"seed", seed},
        {"threads", threads},
        {"force", force},
        {"binary_cache", binary_cache},
        {"min_ascii_letter_ratio", prefilter.min_ascii_letter_ratio},
        {"min_text_tokens", prefilter.min_text_tokens},
        {"parser_command", prefilter.parser_command},
        {"embed_batch_size", embed.batch_size},
        {"embed_in_flight", embed.max_in_flight},
        {"k_prime", neighbors.k_prime},
        {"block", neighbors.block},
        {"k", filter.k},
        {"delta", filter.delta},
        {"gamma", mining.gamma},
        {"pool_size", mining.pool_size},
        {"batch_size", batch_size},
        {"negatives", negatives},
        {"steps", steps},
        {"tau_start", tau_start},
        {"tau_end", tau_end},
        {"toy_feature_dim", toy.feature_dim},
        {"toy_embed_dim", toy.embed_dim},
        {"toy_tau", toy.tau},
        {"toy_lr", toy.lr},
        {"toy_steps", toy.steps},
        {"toy_eval_every", toy.eval_every},
        {"toy_eval_k", toy.eval_k},
        {"toy_batch_size", toy.batch_size},
        {"toy_negatives", toy.negatives},
        {"toy_tau_start", toy.tau_start},
        {"toy_tau_end", toy.tau_end},
        {"heldout_every", heldout_every},
        {"topk", topk},
        {"metrics", metrics},
        {"window", rerank.window},
        {"stride", rerank.stride},
        {"depth", rerank.depth},
        {"max_in_flight", max_in_flight},
        {"instances_per_tuple", listwise.instances_per_tuple},
        {"min_window", listwise.min_size},
        {"max_window", listwise.max_size},
        {"min_s_pos", listwise.min_s_pos},
        {"max_rank", listwise.max_rank},
        {"max_tuples", listwise.max_tuples},
        {"pool_depth", listwise.pool_depth},
        {"audit_sample_size", audit.sample_size},
        {"audit_seeds", audit.seeds},
        {"retrieve_depth", localize.retrieve_depth},
        {"localize_rerank", localize_rerank},
    };
}

const std::vector<std::string>& stage_names() { return kStages; }
const std::vector<ArtifactInfo>& artifacts() { return kArtifacts; }

void run_stage(const std::string& stage, const PipelineConfig& cfg) {
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
    spdlog::info("stage {} seed {} config {}", stage, cfg.seed, cfg.to_json().dump());
    fs::create_directories(cfg.workdir);
    if (stage == "ingest") return stage_ingest(cfg);
    if (stage == "embed") return stage_embed(cfg);
    if (stage == "neighbors") return stage_neighbors(cfg);
    if (stage == "filter") return stage_filter(cfg);
    if (stage == "mine") return stage_mine(cfg);
    if (stage == "sample") return stage_sample(cfg);
    if (stage == "train-toy") return stage_train_toy(cfg);
    if (stage == "retrieve") return stage_retrieve(cfg);
    if (stage == "rerank") return stage_rerank(cfg);
    if (stage == "gen-listwise") return stage_gen_listwise(cfg);
    if (stage == "localize") return stage_localize(cfg);
    if (stage == "eval") return stage_eval(cfg);
    if (stage == "audit") return stage_audit(cfg);
    throw_usage("unknown command \"{}\"", stage);
}

}  // namespace codemine
