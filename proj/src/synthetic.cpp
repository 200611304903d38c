#include "codemine/synthetic.hpp"

#include <algorithm>
#include <array>
#include <unordered_set>

#include <fmt/args.h>
#include <fmt/format.h>

#include "codemine/embedder.hpp"
#include "codemine/simgraph.hpp"

namespace codemine {

namespace {

struct Operation {
    const char* verb;
    std::array<const char*, 3> phrasings;  // query templates over {a} and {b}
    const char* body;                      // code template over {a} and {b}
};

// clang-format off
constexpr std::array<Operation, 10> kOperations{{
    {"sort", {"Sort the {a} records by {b}", "Return {a} entries sorted on {b}", "Sort each {a} item using the {b} key"},
     "def sort_{a}_by_{b}(items):\n    # Sort the {a} records by {b}\n    return sorted(items, key=lambda x: x.{b})\n"},
    {"parse", {"Parse a {a} string into a {b} object", "Parse raw {a} text and build the {b}", "Build a {b} by parsing {a} input"},
     "def parse_{a}_to_{b}(text):\n    # Parse a {a} string into a {b} object\n    return {b}.from_text(text)\n"},
    {"merge", {"Merge two {a} tables on the {b} column", "Combine and merge {a} rows sharing a {b}", "Join the {a} sets by merging on {b}"},
     "def merge_{a}_on_{b}(left, right):\n    # Merge two {a} tables on the {b} column\n    return left.merge(right, on=\"{b}\")\n"},
    {"filter", {"Filter the {a} list keeping valid {b}", "Keep only {a} values that pass the {b} filter", "Drop {a} items whose {b} fails the filter"},
     "def filter_{a}_with_{b}(items):\n    # Filter the {a} list keeping valid {b}\n    return [x for x in items if x.{b}]\n"},
    {"count", {"Count how many {a} values have a {b}", "Return the count of {a} with {b} set", "Tally the {a} entries per {b} and count them"},
     "def count_{a}_with_{b}(items):\n    # Count how many {a} values have a {b}\n    return sum(1 for x in items if x.{b})\n"},
    {"load", {"Load the {a} data from the {b} file", "Read and load {a} records stored in {b}", "Load every {a} from a {b} path"},
     "def load_{a}_from_{b}(path):\n    # Load the {a} data from the {b} file\n    with open(path) as fh:\n        return fh.read()\n"},
    {"save", {"Save the {a} state into the {b} store", "Persist and save {a} to the {b}", "Write the {a} values to {b} storage and save"},
     "def save_{a}_to_{b}(value, store):\n    # Save the {a} state into the {b} store\n    store[\"{b}\"] = value\n"},
    {"validate", {"Validate that the {a} matches the {b} schema", "Check and validate {a} fields against {b}", "Raise if the {a} fails {b} validation"},
     "def validate_{a}_against_{b}(obj):\n    # Validate that the {a} matches the {b} schema\n    if not obj.{b}:\n        raise ValueError(\"{a}\")\n"},
    {"reverse", {"Reverse the order of {a} inside {b}", "Return the {a} sequence of {b} reversed", "Flip and reverse each {a} held in {b}"},
     "def reverse_{a}_in_{b}(seq):\n    # Reverse the order of {a} inside {b}\n    return list(reversed(seq))\n"},
    {"group", {"Group the {a} rows by their {b}", "Bucket and group {a} items on {b}", "Collect {a} entries into groups keyed by {b}"},
     "def group_{a}_by_{b}(rows):\n    # Group the {a} rows by their {b}\n    out = {{}}\n    for r in rows:\n        out.setdefault(r.{b}, []).append(r)\n    return out\n"},
}};
// clang-format on

constexpr std::array<const char*, 10> kFillers{"quickly",   "for the caller", "if possible", "in place",
                                               "when asked", "as needed",      "safely",      "with defaults",
                                               "for later",  "without copying"};

std::string render(const char* tpl, const std::string& a, const std::string& b) {
    return fmt::format(fmt::runtime(tpl), fmt::arg("a", a), fmt::arg("b", b));
}

std::string invent_word(Rng& rng, std::unordered_set<std::string>& used) {
    static constexpr std::string_view consonants = "bdfgklmnprstvz";
    static constexpr std::string_view vowels = "aeiou";
    for (;;) {
        std::string w;
        const std::size_t syllables = 3;
        for (std::size_t s = 0; s < syllables; ++s) {
            w += consonants[rng.below(consonants.size())];
            w += vowels[rng.below(vowels.size())];
        }
        w += consonants[rng.below(consonants.size())];
        if (used.insert(w).second) return w;
    }
}

std::string paraphrase(const Operation& op, const std::string& a, const std::string& b, Rng& rng) {
    std::string text = render(op.phrasings[rng.below(op.phrasings.size())], a, b);
    const std::size_t fillers = rng.below(3);
    for (std::size_t f = 0; f < fillers; ++f) text += std::string(" ") + kFillers[rng.below(kFillers.size())];
    return text + ".";
}

}  // namespace

TopicCorpus make_topic_corpus(const TopicCorpusParams& params) {
    if (params.pairs_per_topic > kOperations.size())
        throw_usage("topic corpus: at most {} pairs per topic", kOperations.size());
    if (params.heldout_per_topic > params.pairs_per_topic)
        throw_usage("topic corpus: more held-out pairs than pairs per topic");
    Rng rng = Rng::keyed(params.seed, "topic-corpus");
    std::unordered_set<std::string> used;
    std::vector<std::array<std::string, 2>> nouns(params.topics);
    for (auto& n : nouns) n = {invent_word(rng, used), invent_word(rng, used)};

    TopicCorpus out;
    for (std::size_t t = 0; t < params.topics; ++t) {
        std::vector<std::size_t> ops(kOperations.size());
        for (std::size_t i = 0; i < ops.size(); ++i) ops[i] = i;
        rng.shuffle(ops);
        for (std::size_t p = 0; p < params.pairs_per_topic; ++p) {
            const Operation& op = kOperations[ops[p]];
            PairRecord r;
            r.id = fmt::format("t{:03}-{}", t, op.verb);
            r.language = params.language;
            r.repo = fmt::format("synthetic/topic{:03}", t);
            r.path = fmt::format("{}/{}.py", nouns[t][0], op.verb);
            r.text = paraphrase(op, nouns[t][0], nouns[t][1], rng);
            const bool heldout = p < params.heldout_per_topic;
            const bool noisy = !heldout && rng.uniform() < params.noise_fraction;
            if (noisy) {
                // Code for another topic's different operation.
                std::size_t other = rng.below(params.topics - 1);
                if (other >= t) ++other;
                std::size_t other_op = rng.below(kOperations.size() - 1);
                if (other_op >= ops[p]) ++other_op;
                r.code = render(kOperations[other_op].body, nouns[other][0], nouns[other][1]);
                out.noisy_ids.insert(r.id);
            } else {
                r.code = render(op.body, nouns[t][0], nouns[t][1]);
            }
            if (heldout) out.heldout_ids.push_back(r.id);
            out.records.push_back(std::move(r));
        }
    }
    std::sort(out.records.begin(), out.records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::sort(out.heldout_ids.begin(), out.heldout_ids.end());
    return out;
}

std::vector<PairRecord> make_fixture_pairs(std::size_t topics, std::uint64_t seed) {
    TopicCorpusParams p;
    p.topics = topics;
    p.noise_fraction = 0.2;
    p.heldout_per_topic = 0;
    p.seed = seed;
    std::vector<PairRecord> out = make_topic_corpus(p).records;
    auto extra = [&](std::string id, std::string text, std::string code) {
        out.push_back({std::move(id), std::move(text), std::move(code), "python", "synthetic/rejects", "rejects.py"});
    };
    const std::string ok_code = "def add(a, b):\n    return a + b\n";
    extra("zz-cyrillic", "Возвращает сумму двух целых чисел", ok_code);
    extra("zz-short", "Add numbers", ok_code);
    extra("zz-markup", "<p>http://example.com/docs</p>", ok_code);
    extra("zz-unbalanced", "Return the sum of two integers", "def add(a, b:\n    return (a + b\n");
    // Same text and code as the first pair: collapses onto it.
    extra("zz-duplicate", out.front().text, out.front().code);
    return out;
}

LocalizationBench make_localization_bench(std::size_t instances, std::uint64_t seed) {
    static constexpr std::array<const char*, 12> kVerbs{"get", "set", "load", "save", "parse", "render",
                                                        "update", "check", "build", "close", "open", "reset"};
    static constexpr std::array<const char*, 10> kNouns{"config", "user", "cache", "session", "token",
                                                        "report", "buffer", "widget", "record", "option"};
    Rng rng = Rng::keyed(seed, "localization-bench");
    std::unordered_set<std::string> used;
    LocalizationBench bench;
    for (std::size_t i = 0; i < instances; ++i) {
        const std::string iid = fmt::format("issue-{:02}", i);
        const std::size_t files = 4;
        const std::size_t per_file = 5;
        std::vector<std::size_t> fn_index;
        const std::size_t first = bench.functions.size();
        for (std::size_t f = 0; f < files; ++f) {
            const std::string path = fmt::format("repo{:02}/{}_{}.py", i, kNouns[rng.below(kNouns.size())], f);
            for (std::size_t k = 0; k < per_file; ++k) {
                FunctionRecord fr;
                const std::string verb = kVerbs[rng.below(kVerbs.size())];
                const std::string noun = kNouns[rng.below(kNouns.size())];
                fr.name = fmt::format("{}_{}_{}", verb, noun, k);
                fr.function_id = fmt::format("{}::{}::{}", iid, path, fr.name);
                fr.file_path = path;
                fr.docstring = fmt::format("{} the {} value", verb, noun);
                fr.body = fmt::format("def {}(self):\n    return self.{}.{}()\n", fr.name, noun, verb);
                fr.instance_id = iid;
                bench.functions.push_back(std::move(fr));
            }
        }
        // One or two gold functions carry a rare token the issue repeats.
        const std::size_t n_gold = i % 3 == 0 ? 2 : 1;
        GoldLabels g;
        g.instance_id = iid;
        std::string issue = "Crash when calling the helper";
        for (std::size_t k = 0; k < n_gold; ++k) {
            std::size_t pick;
            do {
                pick = first + rng.below(files * per_file);
            } while (g.gold_functions.contains(bench.functions[pick].function_id));
            auto& fr = bench.functions[pick];
            const std::string rare = invent_word(rng, used);
            // Every fourth instance gives only a weak hint so that misses occur.
            if (i % 4 == 3) {
                fr.body += fmt::format("    # {}\n", rare.substr(0, 4));
                issue += fmt::format(" near {}", rare);
            } else {
                fr.docstring += fmt::format(" using {}", rare);
                fr.body += fmt::format("    # {} {}\n", rare, rare);
                issue += fmt::format(", {} fails with {} error", rare, rare);
            }
            g.gold_functions.insert(fr.function_id);
        }
        g.issue = issue + ".";
        bench.gold.push_back(std::move(g));
    }
    return bench;
}

ToyExperimentResult run_toy_experiment(const ToyExperimentParams& params) {
    const TopicCorpus corpus = make_topic_corpus(params.corpus);
    const std::set<std::string> heldout(corpus.heldout_ids.begin(), corpus.heldout_ids.end());
    std::vector<PairRecord> train_records;
    for (const auto& r : corpus.records)
        if (!heldout.contains(r.id)) train_records.push_back(r);

    StubProvider stub(params.stub_dim);
    const VectorStore texts = embed_corpus(train_records, stub, Side::text);
    const VectorStore codes = embed_corpus(train_records, stub, Side::code);
    NeighborParams np;
    np.k_prime = std::max(params.filter.k, params.mining.pool_size + 1);
    np.required_min = np.k_prime;
    const SimilarityCache cache = compute_neighbors(texts, codes, np);
    std::vector<std::string> ids;
    for (const auto& r : train_records) ids.push_back(r.id);
    const FilterResult filtered = consistency_filter(cache, params.filter, ids);
    const auto pools = build_negative_pools(cache, filtered.curated, params.mining, store_scores(texts, codes, cache));

    std::vector<CuratedPair> all_pairs;
    for (const auto& o : filtered.outcomes) all_pairs.push_back({o.query_id, o.query_id, o.s_pos, o.rank});

    ToyExperimentResult result;
    result.train_pairs = all_pairs.size();
    result.curated_pairs = filtered.curated.size();
    result.noisy_removed = corpus.noisy_ids.size();
    for (const auto& c : filtered.curated) result.noisy_removed -= corpus.noisy_ids.contains(c.query_id);

    ToyConfig base_cfg = params.train;
    base_cfg.negatives = 0;
    result.baseline = train_toy(make_toy_data(corpus.records, all_pairs, {}, corpus.heldout_ids,
                                              params.train.feature_dim),
                                base_cfg);
    result.treatment = train_toy(make_toy_data(corpus.records, filtered.curated, pools, corpus.heldout_ids,
                                               params.train.feature_dim),
                                 params.train);
    result.baseline_mrr = result.baseline.final_mrr();
    result.treatment_mrr = result.treatment.final_mrr();
    return result;
}

}  // namespace codemine
