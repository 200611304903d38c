#include "codemine/contrastive.hpp"

#include <cmath>

#include "codemine/embedder.hpp"
#include "codemine/ranker.hpp"

namespace codemine {

namespace {

void check_shapes(Eigen::Index n, Eigen::Index pos_rows, Eigen::Index neg_rows, Eigen::Index cols_a,
                  Eigen::Index cols_p, Eigen::Index cols_n) {
    if (n == 0) throw_usage("infonce: empty batch");
    if (pos_rows != n) throw_usage("infonce: {} anchors but {} positives", n, pos_rows);
    if (neg_rows % n != 0) throw_usage("infonce: {} hard negatives is not a multiple of N={}", neg_rows, n);
    if (cols_p != cols_a || (neg_rows > 0 && cols_n != cols_a))
        throw_usage("infonce: column mismatch ({}, {}, {})", cols_a, cols_p, cols_n);
}

// Candidates = [positives; negatives]. Returns logits / tau (N x C).
Matrix logits(const Matrix& anchors, const Matrix& candidates, double tau) {
    return (anchors * candidates.transpose()) / tau;
}

Matrix stack(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    if (bottom.rows() > 0) out.bottomRows(bottom.rows()) = bottom;
    return out;
}

// Row-wise log-softmax loss at the diagonal; also fills probabilities.
double loss_from_logits(const Matrix& z, Matrix* probs) {
    const Eigen::Index n = z.rows();
    double total = 0.0;
    if (probs) probs->resize(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = z.row(i).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < z.cols(); ++c) sum += std::exp(z(i, c) - mx);
        const double lse = mx + std::log(sum);
        total += lse - z(i, i);
        if (probs)
            for (Eigen::Index c = 0; c < z.cols(); ++c) (*probs)(i, c) = std::exp(z(i, c) - lse);
    }
    return total / static_cast<double>(n);
}

// Backprop through row normalization: given h = z/|z| and dL/dh, returns dL/dz.
Matrix normalize_backward(const Matrix& h, const Matrix& norms, const Matrix& dh) {
    Matrix dz(h.rows(), h.cols());
    for (Eigen::Index r = 0; r < h.rows(); ++r) {
        const double proj = h.row(r).dot(dh.row(r));
        dz.row(r) = (dh.row(r) - proj * h.row(r)) / norms(r, 0);
    }
    return dz;
}

// Projection + normalization, keeping norms for the backward pass.
Matrix encode_with_norms(const Matrix& w, const Matrix& x, Matrix& norms) {
    Matrix z = x * w;
    norms.resize(z.rows(), 1);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double nrm = z.row(r).norm();
        if (!(nrm > 0.0)) throw_data("encode: row {} projects to the zero vector", r);
        norms(r, 0) = nrm;
        z.row(r) /= nrm;
    }
    return z;
}

Matrix feature_rows(const std::unordered_map<std::string, std::vector<float>>& table,
                    std::span<const std::string> ids, std::size_t f) {
    Matrix m(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(f));
    for (std::size_t r = 0; r < ids.size(); ++r) {
        auto it = table.find(ids[r]);
        if (it == table.end()) throw_data("toy: no features for \"{}\"", ids[r]);
        for (std::size_t c = 0; c < f; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = it->second[c];
    }
    return m;
}

}  // namespace

LinearEncoder::LinearEncoder(std::size_t feature_dim, std::size_t embed_dim)
    : w_(Matrix::Zero(static_cast<Eigen::Index>(feature_dim), static_cast<Eigen::Index>(embed_dim))) {}

LinearEncoder::LinearEncoder(Matrix weights) : w_(std::move(weights)) {
    if (!w_.allFinite()) throw_data("encoder weights must be finite");
}

LinearEncoder LinearEncoder::random(std::size_t feature_dim, std::size_t embed_dim, std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, "encoder-init");
    Matrix w(static_cast<Eigen::Index>(feature_dim), static_cast<Eigen::Index>(embed_dim));
    const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.normal() * scale;
    return LinearEncoder(std::move(w));
}

Matrix LinearEncoder::encode(const Matrix& features) const {
    if (features.cols() != w_.rows())
        throw_usage("encode: features have {} columns, encoder expects F={}", features.cols(), w_.rows());
    Matrix norms;
    return encode_with_norms(w_, features, norms);
}

double infonce_loss(const ContrastiveBatchTensors& b) {
    check_shapes(b.anchors.rows(), b.positives.rows(), b.negatives.rows(), b.anchors.cols(), b.positives.cols(),
                 b.negatives.cols());
    if (!(b.tau > 0.0)) throw_usage("infonce: tau must be positive");
    return loss_from_logits(logits(b.anchors, stack(b.positives, b.negatives), b.tau), nullptr);
}

LossAndGrad infonce_grad(const LinearEncoder& encoder, const FeatureBatch& b, double tau) {
    check_shapes(b.anchors.rows(), b.positives.rows(), b.negatives.rows(), b.anchors.cols(), b.positives.cols(),
                 b.negatives.cols());
    if (b.anchors.cols() != encoder.weights().rows())
        throw_usage("infonce: features have {} columns, encoder expects F={}", b.anchors.cols(),
                    encoder.weights().rows());
    if (!(tau > 0.0)) throw_usage("infonce: tau must be positive");
    const Matrix& w = encoder.weights();
    const Eigen::Index n = b.anchors.rows();

    Matrix a_norms, c_norms;
    const Matrix cand_x = stack(b.positives, b.negatives);
    const Matrix h = encode_with_norms(w, b.anchors, a_norms);
    const Matrix g = encode_with_norms(w, cand_x, c_norms);

    Matrix probs;
    LossAndGrad out;
    out.loss = loss_from_logits(logits(h, g, tau), &probs);

    // dL/dlogit(i, c) = (p_ic - [c == i]) / N, and logit = h_i . g_c / tau.
    Matrix dlogit = probs;
    for (Eigen::Index i = 0; i < n; ++i) dlogit(i, i) -= 1.0;
    dlogit /= static_cast<double>(n);
    const Matrix dh = dlogit * g / tau;
    const Matrix dg = dlogit.transpose() * h / tau;

    const Matrix dz_a = normalize_backward(h, a_norms, dh);
    const Matrix dz_c = normalize_backward(g, c_norms, dg);
    out.grad = b.anchors.transpose() * dz_a + cand_x.transpose() * dz_c;
    return out;
}

ToyData make_toy_data(std::span<const PairRecord> records, std::vector<CuratedPair> train,
                      std::vector<NegativePool> pools, std::vector<std::string> heldout_ids, std::size_t feature_dim) {
    ToyData d;
    for (const auto& r : records) {
        d.text_features.emplace(r.id, stub_embed(r.text, feature_dim));
        d.code_features.emplace(r.id, stub_embed(r.code, feature_dim));
    }
    d.train = std::move(train);
    d.pools = std::move(pools);
    d.heldout_ids = std::move(heldout_ids);
    return d;
}

double heldout_mrr(const LinearEncoder& encoder, const ToyData& data, std::size_t k) {
    const std::size_t f = encoder.feature_dim();
    const Matrix q = encoder.encode(feature_rows(data.text_features, data.heldout_ids, f));
    const Matrix c = encoder.encode(feature_rows(data.code_features, data.heldout_ids, f));
    VectorStore queries(encoder.embed_dim(), Side::text), codes(encoder.embed_dim(), Side::code);
    std::vector<float> row(encoder.embed_dim());
    for (std::size_t i = 0; i < data.heldout_ids.size(); ++i) {
        for (std::size_t k2 = 0; k2 < row.size(); ++k2) row[k2] = static_cast<float>(q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k2)));
        queries.append(data.heldout_ids[i], row);
        for (std::size_t k2 = 0; k2 < row.size(); ++k2) row[k2] = static_cast<float>(c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k2)));
        codes.append(data.heldout_ids[i], row);
    }
    Qrels qrels;
    for (const auto& id : data.heldout_ids) qrels[id] = {id};
    const auto runs = search_batch(codes, queries, k);
    return compute_metrics(runs, qrels, {MetricKind::mrr, k}).mean;
}

ToyTrace train_toy(const ToyData& data, const ToyConfig& config) {
    if (config.steps < 1) throw_usage("train-toy: steps must be at least 1");
    if (data.heldout_ids.empty()) throw_usage("train-toy: held-out split is empty");
    {
        std::unordered_map<std::string_view, bool> train_ids;
        for (const auto& c : data.train) train_ids.emplace(c.query_id, true);
        for (const auto& h : data.heldout_ids)
            if (train_ids.contains(h)) throw_usage("train-toy: held-out query \"{}\" is also a training query", h);
    }

    LinearEncoder encoder = LinearEncoder::random(config.feature_dim, config.embed_dim, config.seed);
    CurriculumSchedule schedule{config.tau_start, config.tau_end, config.steps};
    BatchStream stream(data.train, data.pools, schedule, config.batch_size, config.negatives, config.seed);

    ToyTrace trace;
    trace.evals.push_back({0, heldout_mrr(encoder, data, config.eval_k)});
    const std::size_t f = config.feature_dim;
    for (std::size_t step = 0; step < config.steps; ++step) {
        const TrainingBatch batch = stream.batch(step);
        std::vector<std::string> anchors, positives, negatives;
        for (const auto& it : batch.items) {
            anchors.push_back(it.query_id);
            positives.push_back(it.positive_id);
            negatives.insert(negatives.end(), it.negative_ids.begin(), it.negative_ids.end());
        }
        FeatureBatch fb{feature_rows(data.text_features, anchors, f), feature_rows(data.code_features, positives, f),
                        feature_rows(data.code_features, negatives, f)};
        auto lg = infonce_grad(encoder, fb, config.tau);
        if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
            throw_data("train-toy: loss diverged at step {}", step);
        trace.steps.push_back({step, batch.tau_prime, lg.loss});
        encoder.weights() -= config.lr * lg.grad;
        const bool last = step + 1 == config.steps;
        if (last || (config.eval_every > 0 && (step + 1) % config.eval_every == 0))
            trace.evals.push_back({step + 1, heldout_mrr(encoder, data, config.eval_k)});
    }
    trace.weights = encoder.weights();
    return trace;
}

void ToyTrace::write(const fs::path& path) const {
    JsonlWriter w(path);
    std::size_t e = 0;
    for (const auto& s : steps) {
        while (e < evals.size() && evals[e].step <= s.step) {
            w.write({{"step", evals[e].step}, {"mrr", evals[e].mrr}});
            ++e;
        }
        w.write({{"step", s.step}, {"tau_prime", s.tau_prime}, {"loss", s.loss}});
    }
    for (; e < evals.size(); ++e) w.write({{"step", evals[e].step}, {"mrr", evals[e].mrr}});
}

}  // namespace codemine
