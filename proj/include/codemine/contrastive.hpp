#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "codemine/common.hpp"
#include "codemine/corpus.hpp"
#include "codemine/curation.hpp"
#include "codemine/sampler.hpp"

namespace codemine {

using Matrix = Eigen::MatrixXd;

// Shared-weight bi-encoder: h = normalize(x W), x in R^F, W in R^{F x d}.
class LinearEncoder {
public:
    LinearEncoder(std::size_t feature_dim, std::size_t embed_dim);
    explicit LinearEncoder(Matrix weights);
    static LinearEncoder random(std::size_t feature_dim, std::size_t embed_dim, std::uint64_t seed);

    std::size_t feature_dim() const { return static_cast<std::size_t>(w_.rows()); }
    std::size_t embed_dim() const { return static_cast<std::size_t>(w_.cols()); }
    const Matrix& weights() const { return w_; }
    Matrix& weights() { return w_; }

    // Row-wise projection and L2 normalization. Throws on a zero projection.
    Matrix encode(const Matrix& features) const;

private:
    Matrix w_;
};

// Encoded batch: anchors h_i (N x d), positives h_i+ (N x d), hard
// negatives (N*M x d, item i owns rows i*M .. i*M+M-1).
struct ContrastiveBatchTensors {
    Matrix anchors;
    Matrix positives;
    Matrix negatives;
    double tau = 0.07;
};

// Mean over anchors of -log softmax of the positive among all N positives
// and all N*M hard negatives.
double infonce_loss(const ContrastiveBatchTensors& batch);

// Raw features for the same layout (rows are F-dimensional).
struct FeatureBatch {
    Matrix anchors;
    Matrix positives;
    Matrix negatives;
};

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;  // F x d
};

LossAndGrad infonce_grad(const LinearEncoder& encoder, const FeatureBatch& batch, double tau);

// Features for the toy trainer: stub_embed of each text and code.
struct ToyData {
    std::unordered_map<std::string, std::vector<float>> text_features;
    std::unordered_map<std::string, std::vector<float>> code_features;
    std::vector<CuratedPair> train;        // training queries
    std::vector<NegativePool> pools;       // may be empty when negatives = 0
    std::vector<std::string> heldout_ids;  // query id == gold code id
};

ToyData make_toy_data(std::span<const PairRecord> records, std::vector<CuratedPair> train,
                      std::vector<NegativePool> pools, std::vector<std::string> heldout_ids, std::size_t feature_dim);

struct ToyConfig {
    std::size_t feature_dim = 256;
    std::size_t embed_dim = 32;
    double tau = 0.07;
    double lr = 0.5;
    std::size_t steps = 200;
    std::size_t eval_every = 50;
    std::size_t eval_k = 10;
    std::size_t batch_size = 32;
    std::size_t negatives = 3;   // 0 = in-batch negatives only
    double tau_start = 0.05;
    double tau_end = 0.001;
    std::uint64_t seed = 0;
};

struct ToyStep {
    std::size_t step;
    double tau_prime;
    double loss;
};

struct ToyEval {
    std::size_t step;
    double mrr;
};

struct ToyTrace {
    std::vector<ToyStep> steps;
    std::vector<ToyEval> evals;
    Matrix weights;

    double final_mrr() const { return evals.empty() ? 0.0 : evals.back().mrr; }
    void write(const fs::path& path) const;
};

// MRR@k of held-out queries against held-out codes.
double heldout_mrr(const LinearEncoder& encoder, const ToyData& data, std::size_t k);

ToyTrace train_toy(const ToyData& data, const ToyConfig& config);

}  // namespace codemine
