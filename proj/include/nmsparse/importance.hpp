#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "nmsparse/tensor.hpp"

namespace nmsparse {

// Non-negative per-weight importance scores, same shape as the source matrix.
struct ScoreMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Per-input-channel scaling factors s_j > 0.
struct EqualizationScales {
    std::vector<double> scales;
};

constexpr double kDefaultClampMin = 1e-8;

inline ScoreMatrix magnitude_scores(const WeightMatrix& w) {
    validate(w);
    ScoreMatrix s{w.rows, w.cols, std::vector<double>(w.size())};
    for (std::size_t i = 0; i < w.size(); ++i) s.data[i] = std::abs(w.data[i]);
    return s;
}

// s_j = max|x_j| / max_i |w[i,j]|, both sides clamped below by clamp_min so
// dead channels produce finite positive scales.
inline EqualizationScales equalization_scales(const WeightMatrix& w, const ChannelStats& stats,
                                              double clamp_min = kDefaultClampMin) {
    validate(w);
    if (stats.abs_max.size() != w.cols)
        throw std::invalid_argument("equalization_scales: stats/cols mismatch");
    if (!(clamp_min > 0.0)) throw std::invalid_argument("equalization_scales: clamp_min <= 0");

    EqualizationScales out;
    out.scales.assign(w.cols, 0.0);
    for (std::size_t j = 0; j < w.cols; ++j) {
        double wmax = 0.0;
        for (std::size_t i = 0; i < w.rows; ++i) {
            const double a = std::abs(w.at(i, j));
            if (a > wmax) wmax = a;
        }
        const double num = std::max(stats.abs_max[j], clamp_min);
        const double den = std::max(wmax, clamp_min);
        out.scales[j] = num / den;
    }
    return out;
}

// W_ec[i,j] = w[i,j] / s_j. Used only as scoring input; stored weights and
// activations stay untouched, and W_ec (x o s) == W x.
inline WeightMatrix equalize_for_scoring(const WeightMatrix& w, const EqualizationScales& eq) {
    validate(w);
    if (eq.scales.size() != w.cols)
        throw std::invalid_argument("equalize_for_scoring: scales/cols mismatch");
    WeightMatrix out(w.rows, w.cols);
    for (std::size_t i = 0; i < w.rows; ++i)
        for (std::size_t j = 0; j < w.cols; ++j) out.at(i, j) = w.at(i, j) / eq.scales[j];
    return out;
}

// Relative-importance score:
//   score[i,j] = (|w_ij| / sum_j' |w_ij'| + |w_ij| / sum_i' |w_i'j|) * ||X_j||_2^a
// Row/column sums are clamped below by clamp_min; summation order is fixed
// (row-major sequential) so results are reproducible bit-for-bit.
inline ScoreMatrix ria_scores(const WeightMatrix& w, const ChannelStats& stats,
                              double activation_power, double clamp_min = kDefaultClampMin) {
    validate(w);
    if (stats.l2_norm.size() != w.cols) throw std::invalid_argument("ria_scores: stats/cols mismatch");
    if (!(activation_power >= 0.0))
        throw std::invalid_argument("ria_scores: activation_power must be >= 0");
    if (!(clamp_min > 0.0)) throw std::invalid_argument("ria_scores: clamp_min <= 0");

    std::vector<double> row_sum(w.rows, 0.0), col_sum(w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i)
        for (std::size_t j = 0; j < w.cols; ++j) {
            const double a = std::abs(w.at(i, j));
            row_sum[i] += a;
            col_sum[j] += a;
        }
    for (double& v : row_sum) v = std::max(v, clamp_min);
    for (double& v : col_sum) v = std::max(v, clamp_min);

    std::vector<double> act(w.cols, 1.0);
    if (activation_power != 0.0)
        for (std::size_t j = 0; j < w.cols; ++j) act[j] = std::pow(stats.l2_norm[j], activation_power);

    ScoreMatrix s{w.rows, w.cols, std::vector<double>(w.size())};
    for (std::size_t i = 0; i < w.rows; ++i)
        for (std::size_t j = 0; j < w.cols; ++j) {
            const double a = std::abs(w.at(i, j));
            s.data[i * w.cols + j] = (a / row_sum[i] + a / col_sum[j]) * act[j];
        }
    return s;
}

}  // namespace nmsparse
