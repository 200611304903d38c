#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "codemine/common.hpp"
#include "codemine/embedder.hpp"

namespace testutil {

using namespace codemine;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "codemine-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string pair_id(std::size_t i) { return fmt::format("p{:04}", i); }

// Random unit rows. With `levels` > 0 each coordinate is drawn from a
// small integer grid, which produces many exactly tied scores.
inline VectorStore random_store(std::size_t n, std::size_t dim, std::uint64_t seed, Side side, int levels = 0) {
    VectorStore s(dim, side);
    Rng rng(seed);
    std::vector<float> v(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : v) {
            if (levels > 0)
                x = static_cast<float>(static_cast<int>(rng.below(2 * levels + 1)) - levels);
            else
                x = static_cast<float>(rng.normal());
        }
        bool zero = true;
        for (float x : v) zero = zero && x == 0.0f;
        if (zero) v[0] = 1.0f;
        s.append(pair_id(i), v);
    }
    return s;
}

// Paired stores: code i is text i perturbed by noise of the given scale, so
// most positives rank first and a controllable fraction does not.
struct PairedStores {
    VectorStore texts;
    VectorStore codes;
};

inline PairedStores paired_stores(std::size_t n, std::size_t dim, std::uint64_t seed, double noise, int levels = 0) {
    PairedStores p{random_store(n, dim, seed, Side::text, levels), VectorStore(dim, Side::code)};
    Rng rng(seed ^ 0x5eedULL);
    std::vector<float> v(dim);
    for (std::size_t i = 0; i < n; ++i) {
        auto t = p.texts.row(i);
        for (std::size_t d = 0; d < dim; ++d) {
            const double e = levels > 0 ? double(static_cast<int>(rng.below(3)) - 1) : rng.normal();
            v[d] = static_cast<float>(t[d] + noise * e);
        }
        bool zero = true;
        for (float x : v) zero = zero && x == 0.0f;
        if (zero) v[0] = 1.0f;
        p.codes.append(pair_id(i), v);
    }
    // Present the codes in a shuffled store order so nothing relies on
    // matching row positions.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    VectorStore shuffled(dim, Side::code);
    for (auto i : order) shuffled.append(p.codes.id(i), p.codes.row(i));
    p.codes = std::move(shuffled);
    return p;
}

inline std::string slurp(const fs::path& p) { return read_text_file(p); }

}  // namespace testutil

#include "codemine/ranker.hpp"

namespace testutil {

// Random run over a 60-candidate universe with 0 to 5 relevant ids per
// query; some queries have no relevant ids at all.
struct MetricFixture {
    std::vector<RankedList> runs;
    Qrels qrels;
};

inline MetricFixture random_metric_fixture(std::size_t queries, std::uint64_t seed) {
    Rng rng(seed);
    MetricFixture fx;
    for (std::size_t q = 0; q < queries; ++q) {
        const std::string qid = fmt::format("q{:03}", q);
        std::vector<std::string> universe;
        for (int c = 0; c < 60; ++c) universe.push_back(fmt::format("c{:02}", c));
        rng.shuffle(universe);
        RankedList run{qid, {}};
        const std::size_t depth = rng.between(1, 60);
        for (std::size_t r = 0; r < depth; ++r)
            run.entries.push_back({universe[r], 1.0f - 0.01f * static_cast<float>(r)});
        fx.runs.push_back(run);
        rng.shuffle(universe);
        const std::size_t nrel = rng.below(6);
        if (nrel > 0 || rng.below(2)) {
            auto& rel = fx.qrels[qid];
            for (std::size_t k = 0; k < nrel; ++k) rel.insert(universe[k]);
        }
    }
    return fx;
}

}  // namespace testutil
