#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace nmsparse {

// Dense row-major weight matrix, out_channels x in_channels.
// All arithmetic downstream is double precision regardless of on-disk dtype.
struct WeightMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, rows * cols

    WeightMatrix() = default;
    WeightMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    WeightMatrix(std::size_t r, std::size_t c, std::vector<double> d)
        : rows(r), cols(c), data(std::move(d)) {}

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    std::size_t size() const { return rows * cols; }
};

// Activation samples used for channel statistics and reconstruction.
// Same layout as WeightMatrix with rows = samples.
struct CalibrationSet {
    std::size_t samples = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, samples * cols

    double at(std::size_t s, std::size_t j) const { return data[s * cols + j]; }
};

// Per-input-channel activation statistics.
struct ChannelStats {
    std::vector<double> abs_max;  // max_s |x[s,j]|
    std::vector<double> l2_norm;  // sqrt(sum_s x[s,j]^2)
};

inline void validate(const WeightMatrix& w) {
    if (w.data.size() != w.rows * w.cols)
        throw std::invalid_argument("WeightMatrix: data length != rows*cols");
    for (double v : w.data)
        if (!std::isfinite(v)) throw std::invalid_argument("WeightMatrix: non-finite entry");
}

inline void validate(const CalibrationSet& c) {
    if (c.samples < 1) throw std::invalid_argument("CalibrationSet: needs at least one sample");
    if (c.data.size() != c.samples * c.cols)
        throw std::invalid_argument("CalibrationSet: data length != samples*cols");
    for (double v : c.data)
        if (!std::isfinite(v)) throw std::invalid_argument("CalibrationSet: non-finite entry");
}

inline ChannelStats channel_stats(const CalibrationSet& calib) {
    validate(calib);
    ChannelStats st;
    st.abs_max.assign(calib.cols, 0.0);
    st.l2_norm.assign(calib.cols, 0.0);
    // Sequential over samples so results never depend on evaluation order.
    for (std::size_t s = 0; s < calib.samples; ++s) {
        const double* row = calib.data.data() + s * calib.cols;
        for (std::size_t j = 0; j < calib.cols; ++j) {
            const double a = std::abs(row[j]);
            if (a > st.abs_max[j]) st.abs_max[j] = a;
            st.l2_norm[j] += row[j] * row[j];
        }
    }
    for (std::size_t j = 0; j < calib.cols; ++j) st.l2_norm[j] = std::sqrt(st.l2_norm[j]);
    return st;
}

// Population variance over all entries (mean subtracted, divide by element count).
inline double tensor_variance(const WeightMatrix& w) {
    if (w.size() == 0) throw std::invalid_argument("tensor_variance: empty matrix");
    const double n = static_cast<double>(w.size());
    double mean = 0.0;
    for (double v : w.data) mean += v;
    mean /= n;
    double acc = 0.0;
    for (double v : w.data) {
        const double d = v - mean;
        acc += d * d;
    }
    return acc / n;
}

namespace detail {

// 53-bit uniform in [0,1) from a raw 64-bit draw. No libm, so the value is
// bit-identical on every platform with IEEE-754 doubles.
inline double uniform01(std::uint64_t x) {
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

constexpr std::uint64_t kColumnSeedSalt = 0x9e3779b97f4a7c15ull;

// Seeded subset of `count` columns out of `cols`, chosen by partial
// Fisher-Yates on an engine independent from the entry stream. The subset
// depends only on (seed, cols, count), so weight and calibration fixtures
// generated with the same seed amplify the same channels.
inline std::vector<std::size_t> pick_columns(std::size_t cols, std::size_t count,
                                             std::uint64_t seed) {
    std::mt19937_64 eng(seed ^ kColumnSeedSalt);
    std::vector<std::size_t> idx(cols);
    for (std::size_t i = 0; i < cols; ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(eng() % (cols - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    return idx;
}

}  // namespace detail

// Deterministic fixture generator ("synth v1"):
//   - entries: mt19937_64(seed) mapped through a 53-bit uniform to [-1, 1)
//   - outlier columns: detail::pick_columns(cols, outlier_cols, seed), each
//     selected column multiplied by outlier_scale
// Fixed seed gives bit-identical output across runs and platforms.
inline WeightMatrix synth_outlier_matrix(std::size_t rows, std::size_t cols,
                                         std::size_t outlier_cols, double outlier_scale,
                                         std::uint64_t seed) {
    if (rows == 0 || cols == 0)
        throw std::invalid_argument("synth_outlier_matrix: zero dimensions");
    if (outlier_cols > cols)
        throw std::invalid_argument("synth_outlier_matrix: outlier_cols > cols");
    if (!(outlier_scale >= 1.0))
        throw std::invalid_argument("synth_outlier_matrix: outlier_scale must be >= 1");

    WeightMatrix w(rows, cols);
    std::mt19937_64 eng(seed);
    for (double& v : w.data) v = 2.0 * detail::uniform01(eng()) - 1.0;

    for (std::size_t j : detail::pick_columns(cols, outlier_cols, seed))
        for (std::size_t i = 0; i < rows; ++i) w.at(i, j) *= outlier_scale;
    return w;
}

// Calibration fixture in the same container; shares the column subset with
// synth_outlier_matrix for equal (seed, cols, outlier_cols).
inline CalibrationSet synth_outlier_calibration(std::size_t samples, std::size_t cols,
                                                std::size_t outlier_cols, double outlier_scale,
                                                std::uint64_t seed) {
    WeightMatrix m = synth_outlier_matrix(samples, cols, outlier_cols, outlier_scale, seed);
    return CalibrationSet{m.rows, m.cols, std::move(m.data)};
}

}  // namespace nmsparse
