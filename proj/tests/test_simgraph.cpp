#include <doctest.h>

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "codemine/simgraph.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace codemine;
using testutil::TempDir;

namespace {

// Cache invariants: rows in text order, neighbors sorted by the shared
// order, unique, at most K', and s_pos equal to the exact diagonal score.
void check_invariants(const SimilarityCache& c, const VectorStore& texts, const VectorStore& codes) {
    REQUIRE(c.rows.size() == texts.size());
    const auto s = oracle::full_scores(texts, codes);
    for (std::size_t i = 0; i < c.rows.size(); ++i) {
        const auto& row = c.rows[i];
        CHECK(row.query_id == texts.id(i));
        CHECK(c.positive_id(row) == texts.id(i));
        CHECK(row.neighbors.size() <= c.k_prime);
        CHECK(row.neighbors.size() == std::min(c.k_prime, codes.size()));
        for (std::size_t r = 1; r < row.neighbors.size(); ++r)
            CHECK(ranks_before(row.neighbors[r - 1].score, c.code_id(row.neighbors[r - 1]), row.neighbors[r].score,
                               c.code_id(row.neighbors[r])));
        auto pos = codes.find(texts.id(i));
        CHECK(row.s_pos == s[i][*pos]);
    }
}

}  // namespace

TEST_CASE("neighbors: one text, one identical code") {
    VectorStore t(4, Side::text), c(4, Side::code);
    std::vector<float> v{0.5f, 0.5f, 0.5f, 0.5f};
    t.append("a", v);
    c.append("a", v);
    auto cache = compute_neighbors(t, c, {4, 64, 1});
    REQUIRE(cache.rows.size() == 1);
    REQUIRE(cache.rows[0].neighbors.size() == 1);
    CHECK(cache.code_id(cache.rows[0].neighbors[0]) == "a");
    CHECK(cache.rows[0].neighbors[0].score == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cache.rows[0].s_pos == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("neighbors: blocked kernel equals brute force for every block size") {
    auto p = testutil::paired_stores(200, 16, 11, 0.8);
    auto ref = brute_force_neighbors(p.texts, p.codes, 16);
    check_invariants(ref, p.texts, p.codes);
    for (std::size_t block : {1, 7, 64, 500}) {
        CAPTURE(block);
        CHECK(compute_neighbors(p.texts, p.codes, {16, block, 1}) == ref);
    }
}

TEST_CASE("neighbors: ties are broken by code id and kernels still agree") {
    auto p = testutil::paired_stores(120, 3, 5, 0.0, 1);
    auto ref = brute_force_neighbors(p.texts, p.codes, 20);
    check_invariants(ref, p.texts, p.codes);
    std::size_t ties = 0;
    for (const auto& row : ref.rows)
        for (std::size_t r = 1; r < row.neighbors.size(); ++r)
            if (row.neighbors[r].score == row.neighbors[r - 1].score) {
                ++ties;
                CHECK(ref.code_id(row.neighbors[r - 1]) < ref.code_id(row.neighbors[r]));
            }
    CHECK(ties > 0);
    CHECK(compute_neighbors(p.texts, p.codes, {20, 9, 1}) == ref);
}

TEST_CASE("neighbors: two codes with equal scores are ordered by id") {
    VectorStore t(2, Side::text), c(2, Side::code);
    t.append("q", std::vector<float>{1.0f, 0.0f});
    c.append("q", std::vector<float>{0.0f, 1.0f});
    c.append("zeta", std::vector<float>{1.0f, 1.0f});
    c.append("alpha", std::vector<float>{1.0f, 1.0f});
    auto cache = compute_neighbors(t, c, {3, 64, 1});
    const auto& n = cache.rows[0].neighbors;
    REQUIRE(n.size() == 3);
    CHECK(cache.code_id(n[0]) == "alpha");
    CHECK(cache.code_id(n[1]) == "zeta");
    CHECK(cache.code_id(n[2]) == "q");
}

TEST_CASE("neighbors: orthogonal rows score zero") {
    VectorStore t(4, Side::text), c(4, Side::code);
    const char* ids[] = {"a", "b", "c", "d"};
    for (int i = 0; i < 4; ++i) {
        std::vector<float> v(4, 0.0f);
        v[i] = 1.0f;
        t.append(ids[i], v);
        c.append(ids[(i + 1) % 4], v);  // the paired code is always orthogonal
    }
    auto cache = brute_force_neighbors(t, c, 4);
    for (const auto& row : cache.rows) {
        CHECK(row.s_pos == doctest::Approx(0.0).epsilon(1e-6));
        for (std::size_t r = 1; r < row.neighbors.size(); ++r) CHECK(std::abs(row.neighbors[r].score) < 1e-6);
    }
}

TEST_CASE("neighbors: thread count does not change the result") {
    auto p = testutil::paired_stores(150, 8, 3, 0.5);
    auto ref = compute_neighbors(p.texts, p.codes, {12, 16, 1});
#ifdef _OPENMP
    const int saved = omp_get_max_threads();
    for (int t : {1, 2, 5}) {
        omp_set_num_threads(t);
        CHECK(compute_neighbors(p.texts, p.codes, {12, 16, 1}) == ref);
    }
    omp_set_num_threads(saved);
#endif
    CHECK(brute_force_neighbors(p.texts, p.codes, 12) == ref);
}

TEST_CASE("neighbors: K' below the required minimum is a usage error") {
    auto p = testutil::paired_stores(10, 4, 1, 0.5);
    try {
        compute_neighbors(p.texts, p.codes, {4, 8, 5});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::usage);
    }
}

TEST_CASE("neighbors: texts without a paired code are rejected") {
    VectorStore t(2, Side::text), c(2, Side::code);
    t.append("a", std::vector<float>{1.0f, 0.0f});
    c.append("b", std::vector<float>{1.0f, 0.0f});
    CHECK_THROWS_AS(compute_neighbors(t, c, {1, 1, 1}), Error);
}

TEST_CASE("similarity cache round-trips through both file formats") {
    TempDir dir;
    auto p = testutil::paired_stores(40, 8, 2, 0.5);
    auto cache = compute_neighbors(p.texts, p.codes, {6, 8, 1});
    cache.save(dir / "c.jsonl");
    cache.save(dir / "c.bin");
    CHECK(SimilarityCache::load(dir / "c.jsonl") == cache);
    CHECK(SimilarityCache::load(dir / "c.bin") == cache);
}
