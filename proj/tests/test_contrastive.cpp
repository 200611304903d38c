#include <doctest.h>

#include <cmath>

#include "codemine/contrastive.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace codemine;

namespace {

std::vector<std::vector<double>> rows(const Matrix& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(m(r, c));
    return out;
}

Matrix unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
    Matrix m = gradcheck::random_matrix(n, d, rng);
    m.rowwise().normalize();
    return m;
}

}  // namespace

TEST_CASE("encoder: identity weights leave unit rows unchanged") {
    Rng rng(1);
    Matrix x = unit_rows(5, 6, rng);
    LinearEncoder e(Matrix::Identity(6, 6));
    CHECK((e.encode(x) - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encoder: outputs are unit norm and scale invariant") {
    Rng rng(2);
    auto e = LinearEncoder::random(20, 7, 3);
    Matrix x = gradcheck::random_matrix(9, 20, rng);
    Matrix h = e.encode(x);
    for (Eigen::Index r = 0; r < h.rows(); ++r) CHECK(std::abs(h.row(r).norm() - 1.0) < 1e-6);
    LinearEncoder scaled(Matrix(3.0 * e.weights()));
    CHECK((scaled.encode(x) - h).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(e.encode(Matrix::Zero(1, 20)), Error);
    CHECK_THROWS_AS(e.encode(Matrix::Ones(1, 5)), Error);
}

TEST_CASE("loss: equal similarities give ln(N(M+1))") {
    for (auto [n, m] : {std::pair<int, int>{2, 1}, {4, 3}, {8, 15}}) {
        Matrix v = Matrix::Zero(1, 4);
        v(0, 0) = 1.0;
        ContrastiveBatchTensors b{v.replicate(n, 1), v.replicate(n, 1), v.replicate(n * m, 1), 0.07};
        CHECK(std::abs(infonce_loss(b) - std::log(double(n) * (m + 1))) < 1e-6);
    }
    Matrix v = Matrix::Ones(1, 3) / std::sqrt(3.0);
    ContrastiveBatchTensors b{v.replicate(2, 1), v.replicate(2, 1), v.replicate(2, 1), 0.07};
    CHECK(infonce_loss(b) == doctest::Approx(1.38629).epsilon(1e-5));
}

TEST_CASE("loss: a dominant positive drives the loss to zero") {
    Matrix e = Matrix::Zero(1, 3);
    e(0, 0) = 1.0;
    ContrastiveBatchTensors b{e, e, Matrix(-e).replicate(3, 1), 0.07};
    CHECK(infonce_loss(b) < 1e-6);
}

TEST_CASE("loss: matches the independent implementation on random batches") {
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
        const auto n = static_cast<Eigen::Index>(rng.between(1, 8));
        const auto m = static_cast<Eigen::Index>(rng.between(0, 4));
        ContrastiveBatchTensors b{unit_rows(n, 6, rng), unit_rows(n, 6, rng), unit_rows(n * m, 6, rng), 0.07};
        CHECK(std::abs(infonce_loss(b) - oracle::infonce(rows(b.anchors), rows(b.positives), rows(b.negatives), 0.07)) <
              1e-10);
    }
}

TEST_CASE("gradient: central differences on a 6-query, M=2, F=24, d=8 batch") {
    Rng rng(6);
    auto enc = LinearEncoder::random(24, 8, 6);
    auto b = gradcheck::random_batch(6, 2, 24, rng);
    CHECK(gradcheck::max_relative_error(enc, b, 0.07) <= 1e-4);
    auto lg = infonce_grad(enc, b, 0.07);
    CHECK(std::abs(lg.loss - gradcheck::loss_at(enc.weights(), b, 0.07)) < 1e-12);
}

TEST_CASE("gradient: in-batch only (M=0) also checks out") {
    Rng rng(7);
    auto enc = LinearEncoder::random(10, 4, 7);
    auto b = gradcheck::random_batch(5, 0, 10, rng);
    CHECK(gradcheck::max_relative_error(enc, b, 0.1) <= 1e-4);
}

TEST_CASE("gradient: vanishes at the minimum configuration") {
    LinearEncoder enc(Matrix::Identity(3, 3));
    Matrix e = Matrix::Zero(1, 3);
    e(0, 0) = 1.0;
    FeatureBatch b{e, e, Matrix(-e).replicate(2, 1)};
    CHECK(infonce_grad(enc, b, 0.07).grad.norm() < 1e-6);
}

TEST_CASE("gradient: duplicating the batch leaves the mean gradient unchanged") {
    // Every denominator term appears twice, so each loss term grows by ln 2
    // and the gradient of the mean stays the same.
    Rng rng(8);
    auto enc = LinearEncoder::random(12, 5, 8);
    auto b = gradcheck::random_batch(4, 2, 12, rng);
    auto stack = [](const Matrix& m) {
        Matrix out(2 * m.rows(), m.cols());
        out << m, m;
        return out;
    };
    FeatureBatch twice{stack(b.anchors), stack(b.positives), stack(b.negatives)};
    auto g1 = infonce_grad(enc, b, 0.07);
    auto g2 = infonce_grad(enc, twice, 0.07);
    CHECK(g2.loss == doctest::Approx(g1.loss + std::log(2.0)).epsilon(1e-12));
    CHECK((g1.grad - g2.grad).cwiseAbs().maxCoeff() < 1e-10);
}

namespace {

ToyData small_toy(std::size_t negatives_pool) {
    std::vector<PairRecord> records;
    std::vector<CuratedPair> train;
    std::vector<NegativePool> pools;
    std::vector<std::string> heldout;
    for (int i = 0; i < 24; ++i) {
        const std::string id = fmt::format("r{:02}", i);
        records.push_back({id, fmt::format("compute widget {} from gadget {}", i, i * 7),
                           fmt::format("def widget_{}(g):\n    return gadget_{}(g)\n", i, i * 7), "python", "", ""});
        if (i < 16) {
            train.push_back({id, id, 0.9f, 1});
            NegativePool p{id, id, 0.9f, {}, false};
            for (std::size_t k = 1; k <= negatives_pool; ++k)
                p.entries.push_back({fmt::format("r{:02}", (i + int(k)) % 16), 0.5f - 0.01f * float(k)});
            pools.push_back(p);
        } else {
            heldout.push_back(id);
        }
    }
    return make_toy_data(records, train, pools, heldout, 64);
}

}  // namespace

TEST_CASE("toy trainer: learning rate zero leaves the weights alone") {
    auto data = small_toy(4);
    ToyConfig cfg;
    cfg.feature_dim = 64;
    cfg.embed_dim = 8;
    cfg.steps = 1;
    cfg.lr = 0.0;
    cfg.batch_size = 4;
    cfg.negatives = 2;
    auto trace = train_toy(data, cfg);
    const auto init = LinearEncoder::random(64, 8, cfg.seed);
    CHECK(trace.weights == init.weights());
    REQUIRE(trace.evals.size() == 2);
    CHECK(trace.evals[0].mrr == trace.evals[1].mrr);
    CHECK(trace.evals[0].mrr == heldout_mrr(init, data, cfg.eval_k));
}

TEST_CASE("toy trainer: same config and seed give identical traces") {
    auto data = small_toy(4);
    ToyConfig cfg;
    cfg.feature_dim = 64;
    cfg.embed_dim = 8;
    cfg.steps = 20;
    cfg.eval_every = 5;
    cfg.batch_size = 4;
    cfg.negatives = 2;
    auto a = train_toy(data, cfg);
    auto b = train_toy(data, cfg);
    CHECK(a.weights == b.weights);
    REQUIRE(a.steps.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) CHECK(a.steps[i].loss == b.steps[i].loss);
    CHECK(a.evals.size() == 5);
    testutil::TempDir dir;
    a.write(dir / "a.jsonl");
    b.write(dir / "b.jsonl");
    CHECK(testutil::slurp(dir / "a.jsonl") == testutil::slurp(dir / "b.jsonl"));
}

TEST_CASE("toy trainer: held-out queries may not be trained on") {
    auto data = small_toy(4);
    data.heldout_ids.push_back(data.train.front().query_id);
    CHECK_THROWS_AS(train_toy(data, ToyConfig{.feature_dim = 64, .embed_dim = 8, .batch_size = 4, .negatives = 2}),
                    Error);
}
