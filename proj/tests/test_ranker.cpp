#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "codemine/ranker.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace codemine;
using testutil::TempDir;

namespace {

RankedList list_of(const std::string& qid, const std::vector<std::string>& ids) {
    RankedList l{qid, {}};
    for (std::size_t i = 0; i < ids.size(); ++i) l.entries.push_back({ids[i], 1.0f - 0.1f * float(i)});
    return l;
}

double metric(const std::vector<RankedList>& runs, const Qrels& q, const std::string& spec) {
    return compute_metrics(runs, q, MetricSpec::parse(spec)).mean;
}

}  // namespace

TEST_CASE("search: a stored vector is its own top hit") {
    auto store = testutil::random_store(50, 16, 3, Side::code);
    auto r = search(store, store.row(17), 5, "q");
    REQUIRE(r.entries.size() == 5);
    CHECK(r.entries[0].id == store.id(17));
    CHECK(r.entries[0].score == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(search(store, store.row(0), 500).entries.size() == 50);
}

TEST_CASE("search: equals a full-sort oracle on a 500-row store") {
    auto store = testutil::random_store(500, 12, 4, Side::code, 2);
    auto queries = testutil::random_store(20, 12, 5, Side::text, 2);
    auto runs = search_batch(store, queries, 40);
    const auto s = oracle::full_scores(queries, store);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::vector<std::size_t> order(store.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) {
            if (s[q][a] != s[q][b]) return s[q][a] > s[q][b];
            return store.id(a) < store.id(b);
        });
        CHECK(runs[q].query_id == queries.id(q));
        REQUIRE(runs[q].entries.size() == 40);
        for (std::size_t r = 0; r < 40; ++r) {
            CHECK(runs[q].entries[r].id == store.id(order[r]));
            CHECK(runs[q].entries[r].score == s[q][order[r]]);
        }
    }
}

TEST_CASE("metrics: spot values") {
    Qrels q{{"q", {"c"}}};
    CHECK(metric({list_of("q", {"a", "b", "c", "d"})}, q, "MRR@100") == 1.0 / 3.0);
    CHECK(metric({list_of("q", {"a", "c", "b"})}, q, "nDCG@10") == 1.0 / std::log2(3.0));
    CHECK(metric({list_of("q", {"a", "b", "c"})}, q, "MRR@2") == 0.0);
    Qrels two{{"q", {"a", "z"}}};
    CHECK(metric({list_of("q", {"a", "b", "c"})}, two, "Recall@3") == 0.5);
}

TEST_CASE("metrics: equal the independent implementation on 50 random fixtures") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto fx = testutil::random_metric_fixture(20, seed);
        for (const char* spec : {"MRR@10", "nDCG@10", "Recall@20", "MRR@1000", "nDCG@3", "Recall@100"}) {
            auto report = compute_metrics(fx.runs, fx.qrels, MetricSpec::parse(spec));
            const auto ms = MetricSpec::parse(spec);
            double sum = 0;
            for (const auto& run : fx.runs) {
                std::vector<std::string> ids;
                for (const auto& e : run.entries) ids.push_back(e.id);
                auto it = fx.qrels.find(run.query_id);
                const std::set<std::string> rel = it == fx.qrels.end() ? std::set<std::string>{} : it->second;
                const double want = ms.kind == MetricKind::mrr    ? oracle::mrr(ids, rel, ms.k)
                                    : ms.kind == MetricKind::ndcg ? oracle::ndcg(ids, rel, ms.k)
                                                                  : oracle::recall(ids, rel, ms.k);
                CHECK(std::abs(report.per_query.at(run.query_id) - want) <= 1e-10);
                sum += want;
            }
            CHECK(std::abs(report.mean - sum / double(fx.runs.size())) <= 1e-10);
        }
    }
}

TEST_CASE("metrics: queries without relevant ids score zero and are flagged") {
    Qrels q{{"a", {"x"}}};
    auto r = compute_metrics(std::vector<RankedList>{list_of("a", {"x"}), list_of("b", {"x"})}, q, {MetricKind::mrr, 10});
    CHECK(r.per_query["b"] == 0.0);
    CHECK(r.flagged == std::vector<std::string>{"b"});
    CHECK(r.mean == 0.5);
}

TEST_CASE("metrics: corrupt runs and bad specs are errors") {
    Qrels q{{"a", {"x"}}};
    CHECK_THROWS_AS(compute_metrics(std::vector<RankedList>{list_of("a", {"x", "x"})}, q, {MetricKind::mrr, 10}), Error);
    CHECK_THROWS_AS(compute_metrics(std::vector<RankedList>{list_of("a", {"x"}), list_of("a", {"y"})}, q,
                                    {MetricKind::mrr, 10}),
                    Error);
    CHECK_THROWS_AS(MetricSpec::parse("MAP@10"), Error);
    CHECK_THROWS_AS(MetricSpec::parse("MRR@0"), Error);
    CHECK(MetricSpec::parse("ndcg@10").name() == "nDCG@10");
    CHECK(MetricSpec::parse("recall@100").name() == "Recall@100");
}

TEST_CASE("trec files round-trip and accept the short column forms") {
    TempDir dir;
    auto store = testutil::random_store(30, 8, 1, Side::code);
    auto queries = testutil::random_store(4, 8, 2, Side::text);
    auto runs = search_batch(store, queries, 10);
    write_run(dir / "r.trec", runs, "test");
    CHECK(read_run(dir / "r.trec") == runs);
    Qrels q{{"p0000", {"p0001", "p0002"}}, {"p0003", {"p0009"}}};
    write_qrels(dir / "q.trec", q);
    CHECK(read_qrels(dir / "q.trec") == q);

    write_text_file(dir / "short.trec", "q1 b 2 0.5 tag\nq1 a 1 0.9 tag\n");
    auto s = read_run(dir / "short.trec");
    REQUIRE(s.size() == 1);
    CHECK(s[0].entries[0].id == "a");
    write_text_file(dir / "short.qrels", "q1 a 1\nq1 b 0\n");
    CHECK(read_qrels(dir / "short.qrels") == Qrels{{"q1", {"a"}}});
    write_text_file(dir / "bad.trec", "q1 a\n");
    CHECK_THROWS_AS(read_run(dir / "bad.trec"), Error);
}
