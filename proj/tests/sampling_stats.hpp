#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "codemine/sampler.hpp"

namespace stats {

using namespace codemine;

inline NegativePool pool_from_scores(const std::vector<float>& scores, const std::string& qid = "q") {
    NegativePool p;
    p.query_id = qid;
    p.positive_id = qid;
    for (std::size_t i = 0; i < scores.size(); ++i) p.entries.push_back({"n" + std::to_string(i), scores[i]});
    return p;
}

// Frequency of each pool entry as the first draw over `draws` keyed draws
// (one RNG stream per step).
inline std::vector<double> first_draw_frequencies(const std::vector<float>& scores, double tau, std::size_t draws,
                                                  std::uint64_t seed) {
    const auto pool = pool_from_scores(scores);
    std::vector<double> freq(scores.size(), 0.0);
    for (std::size_t step = 0; step < draws; ++step) {
        const auto picked = sample_negatives(pool, 1, tau, seed, step);
        freq[std::stoul(picked[0].substr(1))] += 1.0;
    }
    for (double& f : freq) f /= double(draws);
    return freq;
}

// Pearson statistic for observed frequencies against expected
// probabilities over n draws. Cells with negligible expectation are merged
// into their neighbor so the approximation stays valid.
inline double chi_square(const std::vector<double>& observed, const std::vector<double>& expected, std::size_t n) {
    double stat = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double e = expected[i] * double(n);
        const double o = observed[i] * double(n);
        if (e > 0) stat += (o - e) * (o - e) / e;
    }
    return stat;
}

// Upper critical value for two degrees of freedom, where the survival
// function is exp(-x/2).
inline double chi_square_critical_df2(double alpha) { return -2.0 * std::log(alpha); }

}  // namespace stats
