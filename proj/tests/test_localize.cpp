#include <doctest.h>

#include <algorithm>

#include "codemine/backends.hpp"
#include "codemine/localize.hpp"
#include "codemine/synthetic.hpp"
#include "helpers.hpp"
#include "localization_fixture.hpp"

using namespace codemine;

namespace {

FunctionRecord fn(std::string id, std::string file, std::string doc, std::string body = "pass") {
    return {id, std::move(file), id, std::move(doc), std::move(body), ""};
}

RankedList ranked(const std::string& qid, const std::vector<std::string>& ids) {
    RankedList r{qid, {}};
    for (std::size_t i = 0; i < ids.size(); ++i) r.entries.push_back({ids[i], 1.0f - 0.1f * float(i)});
    return r;
}

}  // namespace

TEST_CASE("localize: a one-function snapshot ranks that function first") {
    StubProvider p(64);
    std::vector<FunctionRecord> snap{fn("only", "a.py", "does a thing")};
    auto index = embed_snapshot(snap, p);
    auto r = localize("i", "something is broken", snap, index, p, nullptr, {});
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].id == "only");
}

TEST_CASE("localize: the identity reranker keeps the retriever order") {
    StubProvider p(64);
    auto bench = make_localization_bench(3, 1);
    auto snap = snapshot_for(bench.functions, bench.gold[1].instance_id);
    auto index = embed_snapshot(snap, p);
    IdentityReranker id;
    auto plain = localize(bench.gold[1].instance_id, bench.gold[1].issue, snap, index, p, nullptr, {});
    auto reranked = localize(bench.gold[1].instance_id, bench.gold[1].issue, snap, index, p, &id, {});
    CHECK(plain == reranked);
}

TEST_CASE("localize: the function sharing the issue's rare tokens ranks first") {
    StubProvider p(256);
    std::vector<FunctionRecord> snap{
        fn("load_config", "cfg.py", "load the config value"),
        fn("save_config", "cfg.py", "save the config value"),
        fn("parse_token", "tok.py", "parse the token value using zorblax", "    # zorblax zorblax"),
        fn("render_user", "ui.py", "render the user value"),
    };
    auto index = embed_snapshot(snap, p);
    auto r = localize("i", "Crash: zorblax fails with zorblax error", snap, index, p, nullptr, {});
    CHECK(r.entries[0].id == "parse_token");
    // Brute-force cosine agrees.
    auto q = stub_embed("Crash: zorblax fails with zorblax error", 256);
    std::size_t best = 0;
    float best_s = -2;
    for (std::size_t i = 0; i < index.size(); ++i) {
        const float s = dot_score(q, index.row(i));
        if (s > best_s) best_s = s, best = i;
    }
    CHECK(index.id(best) == "parse_token");
}

TEST_CASE("file rollup: first occurrence order") {
    std::unordered_map<std::string, std::string> file_of{{"f1", "a"}, {"f2", "b"}, {"f3", "a"}};
    CHECK(file_rollup(ranked("i", {"f1", "f2", "f3"}), file_of) == std::vector<std::string>{"a", "b"});
    std::unordered_map<std::string, std::string> one{{"f1", "a"}, {"f2", "a"}, {"f3", "a"}};
    CHECK(file_rollup(ranked("i", {"f3", "f1", "f2"}), one) == std::vector<std::string>{"a"});
    CHECK_THROWS_AS(file_rollup(ranked("i", {"zz"}), one), Error);
}

TEST_CASE("file rollup: random permutations match a first-occurrence scan") {
    Rng rng(3);
    std::unordered_map<std::string, std::string> file_of;
    std::vector<std::string> ids;
    for (int i = 0; i < 40; ++i) {
        ids.push_back(fmt::format("f{}", i));
        file_of[ids.back()] = fmt::format("file{}", rng.below(9));
    }
    for (int t = 0; t < 200; ++t) {
        rng.shuffle(ids);
        std::vector<std::string> want;
        for (const auto& id : ids)
            if (std::find(want.begin(), want.end(), file_of[id]) == want.end()) want.push_back(file_of[id]);
        CHECK(file_rollup(ranked("i", ids), file_of) == want);
    }
}

TEST_CASE("localization eval: gold file at rank 2 and gold function at rank 6") {
    std::unordered_map<std::string, std::string> file_of;
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) {
        ids.push_back(fmt::format("f{}", i));
        file_of[ids.back()] = fmt::format("file{}", i);
    }
    GoldLabels g{"i", "issue", {"f5"}, {}};
    auto r = eval_localization(std::vector<RankedList>{ranked("i", ids)}, std::vector<GoldLabels>{g}, file_of);
    CHECK(r.function_any[5] == 0.0);
    CHECK(r.function_any[10] == 1.0);

    // f1 is the only function of the gold file, at rank 2.
    GoldLabels gf{"i", "issue", {"f1"}, {}};
    auto rf = eval_localization(std::vector<RankedList>{ranked("i", ids)}, std::vector<GoldLabels>{gf}, file_of);
    CHECK(rf.file_any[1] == 0.0);
    CHECK(rf.file_any[2] == 1.0);
    CHECK(rf.file_any[3] == 1.0);
}

TEST_CASE("localization eval: equals the independent fixture") {
    auto f = locfix::load(fs::path(CODEMINE_TEST_DATA) / "localization_oracle.json");
    REQUIRE(f.predictions.size() == 20);
    auto r = eval_localization(f.predictions, f.gold, f.file_of);
    CHECK(locfix::mismatches(r, f) == 0);
    for (const auto* m : {&r.file_any, &r.file_complete})
        CHECK((m->at(1) <= m->at(2) && m->at(2) <= m->at(3)));
    CHECK(r.function_any.at(5) <= r.function_any.at(10));
    auto j = r.to_json();
    CHECK(j["any"]["file"]["1"].get<double>() == r.file_any.at(1));
    CHECK(r.to_table().find("complete") != std::string::npos);
}

TEST_CASE("localization eval: inconsistent inputs are errors") {
    std::unordered_map<std::string, std::string> file_of{{"f1", "a"}};
    GoldLabels g{"i", "issue", {"f1"}, {}};
    GoldLabels unknown{"i", "issue", {"nope"}, {}};
    CHECK_THROWS_AS(eval_localization(std::vector<RankedList>{}, std::vector<GoldLabels>{g}, file_of), Error);
    CHECK_THROWS_AS(eval_localization(std::vector<RankedList>{ranked("i", {"f1"})}, std::vector<GoldLabels>{unknown},
                                      file_of),
                    Error);
    CHECK_THROWS_AS(eval_localization(std::vector<RankedList>{ranked("i", {"f1"}), ranked("i", {"f1"})},
                                      std::vector<GoldLabels>{g}, file_of),
                    Error);
}

TEST_CASE("snapshot and gold files round-trip; shared functions join every instance") {
    testutil::TempDir dir;
    auto bench = make_localization_bench(4, 2);
    bench.functions.push_back({"shared::util", "util.py", "util", "helper", "pass", ""});
    write_snapshot(dir / "s.jsonl", bench.functions);
    write_gold(dir / "g.jsonl", bench.gold);
    CHECK(read_snapshot(dir / "s.jsonl") == bench.functions);
    CHECK(read_gold(dir / "g.jsonl") == bench.gold);
    auto snap = snapshot_for(bench.functions, "issue-01");
    CHECK(snap.size() == 21);
    CHECK(snap.back().function_id == "shared::util");
}
