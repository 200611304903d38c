#include <doctest.h>

#include <set>

#include "codemine/common.hpp"
#include "helpers.hpp"

using namespace codemine;

TEST_CASE("fnv1a matches published test vectors") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("keyed RNG streams are reproducible and separated by key and step") {
    auto draw = [](Rng r) {
        std::vector<std::uint64_t> v;
        for (int i = 0; i < 8; ++i) v.push_back(r.next());
        return v;
    };
    CHECK(draw(Rng::keyed(7, "q1", 3)) == draw(Rng::keyed(7, "q1", 3)));
    CHECK(draw(Rng::keyed(7, "q1", 3)) != draw(Rng::keyed(7, "q2", 3)));
    CHECK(draw(Rng::keyed(7, "q1", 3)) != draw(Rng::keyed(7, "q1", 4)));
    CHECK(draw(Rng::keyed(7, "q1", 3)) != draw(Rng::keyed(8, "q1", 3)));
}

TEST_CASE("Rng::below stays in range and covers it") {
    Rng rng(1);
    std::set<std::size_t> seen;
    for (int i = 0; i < 2000; ++i) {
        auto x = rng.below(7);
        REQUIRE(x < 7);
        seen.insert(x);
    }
    CHECK(seen.size() == 7);
    CHECK(rng.below(0) == 0);
    CHECK(rng.below(1) == 0);
    for (int i = 0; i < 100; ++i) {
        auto x = rng.between(3, 5);
        CHECK((x >= 3 && x <= 5));
    }
}

TEST_CASE("Rng::shuffle yields a permutation") {
    Rng rng(3);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto w = v;
    rng.shuffle(w);
    CHECK(std::multiset<int>(w.begin(), w.end()) == std::multiset<int>(v.begin(), v.end()));
}

TEST_CASE("dot_score accumulates in double") {
    std::vector<float> a{1e8f, 1.0f, -1e8f};
    std::vector<float> b{1.0f, 1.0f, 1.0f};
    CHECK(dot_score(a, b) == 1.0f);
}

TEST_CASE("read_jsonl reports the line number of a malformed record") {
    testutil::TempDir dir;
    write_text_file(dir / "x.jsonl", "{\"a\":1}\n\n{broken\n");
    std::size_t seen = 0;
    try {
        read_jsonl(dir / "x.jsonl", [&](const json&, std::size_t) { ++seen; });
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    CHECK(seen == 1);
}

TEST_CASE("JsonlWriter round-trips records") {
    testutil::TempDir dir;
    {
        JsonlWriter w(dir / "sub" / "y.jsonl");
        w.write({{"k", "v"}});
        w.write({{"n", 2}});
    }
    std::vector<json> got;
    read_jsonl(dir / "sub" / "y.jsonl", [&](const json& j, std::size_t) { got.push_back(j); });
    REQUIRE(got.size() == 2);
    CHECK(got[0]["k"] == "v");
    CHECK(got[1]["n"] == 2);
}

TEST_CASE("require_string names the missing field and line") {
    json j = {{"text", "x"}};
    try {
        require_string(j, "code", 17);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string w = e.what();
        CHECK(w.find("code") != std::string::npos);
        CHECK(w.find("17") != std::string::npos);
    }
}
