// Command-line entry point: one subcommand per pipeline stage.
#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "codemine/pipeline.hpp"
#include "codemine/synthetic.hpp"

using namespace codemine;

namespace {

void add_options(CLI::App& app, PipelineConfig& c) {
    // Paths.
    app.add_option("--workdir", c.workdir, "Directory holding all stage artifacts")->capture_default_str();
    app.add_option("--pairs", c.pairs, "Pair file to ingest (JSONL)");
    app.add_option("--language", c.language, "Language tag for records that lack one")->capture_default_str();
    app.add_option("--snapshot", c.snapshot, "Function snapshot file (JSONL) for localize/eval");
    app.add_option("--gold", c.gold, "Gold label file (JSONL) for localize/eval");
    app.add_option("--run-file", c.run_file, "Run file to evaluate instead of the working-directory run");
    app.add_option("--qrels-file", c.qrels_file, "Qrels file to evaluate against");
    app.add_flag("--eval-localization", c.eval_localization, "eval: score localize.trec against --gold");
    app.add_flag("--eval-reranked", c.eval_reranked, "eval: score reranked.trec instead of run.trec");

    // Backends.
    app.add_option("--provider", c.provider, "Embedding provider: stub | process:<cmd> | http://host:port")
        ->capture_default_str();
    app.add_option("--reranker", c.reranker, "Rerank backend: identity | stub | process:<cmd> | http://...")
        ->capture_default_str();
    app.add_option("--teacher", c.teacher, "Teacher backend for gen-listwise")->capture_default_str();
    app.add_option("--judge", c.judge, "Judge backend for audit: stub | process:<cmd> | http://...")
        ->capture_default_str();
    app.add_option("--stub-dim", c.stub_dim, "Dimension of the built-in stub embedder")->capture_default_str();
    app.add_option("--judge-threshold", c.judge_threshold, "Stub judge: cosine needed for a yes")
        ->capture_default_str();

    // Run control.
    app.add_option("--seed", c.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--threads", c.threads, "Worker thread bound (0 = runtime default)")->capture_default_str();
    app.add_flag("--force", c.force, "Overwrite existing artifacts");
    app.add_flag("--binary-cache", c.binary_cache, "Store the similarity cache in binary form");

    // corpus
    app.add_option("--min-ascii-letter-ratio", c.prefilter.min_ascii_letter_ratio)->capture_default_str();
    app.add_option("--min-text-tokens", c.prefilter.min_text_tokens)->capture_default_str();
    app.add_option("--parser-command", c.prefilter.parser_command, "External syntax checker (code on stdin)");
    // embedder
    app.add_option("--embed-batch-size", c.embed.batch_size)->capture_default_str();
    app.add_option("--embed-in-flight", c.embed.max_in_flight)->capture_default_str();
    // simgraph / curation
    app.add_option("--k-prime", c.neighbors.k_prime, "Neighbors cached per text")->capture_default_str();
    app.add_option("--block", c.neighbors.block, "Text rows per similarity block")->capture_default_str();
    app.add_option("--k", c.filter.k, "Consistency filter rank cutoff")->capture_default_str();
    app.add_option("--delta", c.filter.delta, "Consistency filter similarity threshold")->capture_default_str();
    app.add_option("--gamma", c.mining.gamma, "False-negative ratio")->capture_default_str();
    app.add_option("--pool-size", c.mining.pool_size, "Hard-negative pool size P")->capture_default_str();
    // sampler
    app.add_option("--batch-size", c.batch_size, "Queries per batch N")->capture_default_str();
    app.add_option("--negatives", c.negatives, "Hard negatives per query M")->capture_default_str();
    app.add_option("--steps", c.steps, "Batches to emit")->capture_default_str();
    app.add_option("--tau-start", c.tau_start, "Sampling temperature at step 0")->capture_default_str();
    app.add_option("--tau-end", c.tau_end, "Sampling temperature at the last step")->capture_default_str();
    // contrastive toy
    app.add_option("--toy-feature-dim", c.toy.feature_dim)->capture_default_str();
    app.add_option("--toy-embed-dim", c.toy.embed_dim)->capture_default_str();
    app.add_option("--toy-tau", c.toy.tau)->capture_default_str();
    app.add_option("--toy-lr", c.toy.lr)->capture_default_str();
    app.add_option("--toy-steps", c.toy.steps)->capture_default_str();
    app.add_option("--toy-eval-every", c.toy.eval_every)->capture_default_str();
    app.add_option("--toy-eval-k", c.toy.eval_k)->capture_default_str();
    app.add_option("--toy-batch-size", c.toy.batch_size)->capture_default_str();
    app.add_option("--toy-negatives", c.toy.negatives)->capture_default_str();
    app.add_option("--toy-tau-start", c.toy.tau_start)->capture_default_str();
    app.add_option("--toy-tau-end", c.toy.tau_end)->capture_default_str();
    app.add_option("--heldout-every", c.heldout_every)->capture_default_str();
    // ranker
    app.add_option("--topk", c.topk, "Retrieval depth")->capture_default_str();
    app.add_option("--metrics", c.metrics, "Metrics such as MRR@10 nDCG@10 Recall@100")->capture_default_str();
    // rerank
    app.add_option("--window", c.rerank.window)->capture_default_str();
    app.add_option("--stride", c.rerank.stride)->capture_default_str();
    app.add_option("--depth", c.rerank.depth)->capture_default_str();
    app.add_option("--max-in-flight", c.max_in_flight)->capture_default_str();
    app.add_option("--instances-per-tuple", c.listwise.instances_per_tuple)->capture_default_str();
    app.add_option("--min-window", c.listwise.min_size)->capture_default_str();
    app.add_option("--max-window", c.listwise.max_size)->capture_default_str();
    app.add_option("--min-s-pos", c.listwise.min_s_pos)->capture_default_str();
    app.add_option("--max-rank", c.listwise.max_rank)->capture_default_str();
    app.add_option("--max-tuples", c.listwise.max_tuples)->capture_default_str();
    app.add_option("--pool-depth", c.listwise.pool_depth)->capture_default_str();
    // audit
    app.add_option("--audit-sample-size", c.audit.sample_size)->capture_default_str();
    app.add_option("--audit-seeds", c.audit.seeds)->capture_default_str();
    // localize
    app.add_option("--retrieve-depth", c.localize.retrieve_depth)->capture_default_str();
    app.add_flag("--localize-rerank", c.localize_rerank, "Rerank localization candidates with --reranker");
}

int exit_code(ErrorKind k) { return static_cast<int>(k); }

}  // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("codemine");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");

    CLI::App app{"codemine: contrastive code-retrieval curation and evaluation"};
    app.fallthrough();
    app.require_subcommand(1, 1);
    app.set_config("--config", "", "Configuration file (key = value); command-line flags win");
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace | debug | info | warn | error")->capture_default_str();

    PipelineConfig config;
    add_options(app, config);

    std::vector<std::pair<std::string, CLI::App*>> stages;
    const std::map<std::string, std::string> help{
        {"ingest", "Read and prefilter a pair file"},
        {"embed", "Embed texts and codes into vector stores"},
        {"neighbors", "Compute the top-K' similarity cache"},
        {"filter", "Dual consistency filtering"},
        {"mine", "Build false-negative-filtered hard-negative pools"},
        {"sample", "Emit curriculum training batches"},
        {"train-toy", "Train the toy bi-encoder and trace held-out MRR"},
        {"retrieve", "Dense retrieval of codes for every text"},
        {"rerank", "Sliding-window listwise rerank of the retrieval run"},
        {"gen-listwise", "Generate teacher-labelled listwise instances"},
        {"localize", "Function localization over repository snapshots"},
        {"eval", "Score a run (or localization) against gold labels"},
        {"audit", "Judge a sample of pairs for correctness"},
    };
    for (const auto& name : stage_names()) stages.emplace_back(name, app.add_subcommand(name, help.at(name)));

    auto* fixture = app.add_subcommand("fixture", "Write the synthetic fixtures (pairs, snapshot, gold)");
    std::string fixture_dir = "data";
    std::size_t fixture_topics = 50;
    fixture->add_option("--out", fixture_dir, "Output directory")->capture_default_str();
    fixture->add_option("--topics", fixture_topics, "Topics (10 pairs each)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code(ErrorKind::usage);
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (fixture->parsed()) {
            fs::create_directories(fixture_dir);
            const auto pairs = make_fixture_pairs(fixture_topics, config.seed);
            JsonlWriter w(fs::path(fixture_dir) / "fixture_pairs.jsonl");
            for (const auto& r : pairs)
                w.write({{"id", r.id}, {"text", r.text}, {"code", r.code}, {"language", r.language},
                         {"repo", r.repo}, {"path", r.path}});
            w.close();
            const auto bench = make_localization_bench(20, config.seed);
            write_snapshot(fs::path(fixture_dir) / "fixture_snapshot.jsonl", bench.functions);
            write_gold(fs::path(fixture_dir) / "fixture_gold.jsonl", bench.gold);
            spdlog::info("fixture: {} pairs, {} functions, {} issues in {}", pairs.size(), bench.functions.size(),
                         bench.gold.size(), fixture_dir);
            return 0;
        }
        for (const auto& [name, sub] : stages)
            if (sub->parsed()) run_stage(name, config);
        return 0;
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return exit_code(ErrorKind::data);
    }
}
