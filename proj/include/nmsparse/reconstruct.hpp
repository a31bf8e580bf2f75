#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "nmsparse/pruning.hpp"
#include "nmsparse/tensor.hpp"

namespace nmsparse {

class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct ReconstructionSettings {
    std::size_t max_iters = 500;
    double step_size = 0.0;  // 0 = auto (1/L from a power-iteration estimate)
    double rel_tol = 1e-7;
    double ridge = 0.0;
};

struct ReconstructionResult {
    PrunedLayer tuned;
    double initial_loss = 0.0;  // ||W X^T - (W_hat + salient) X^T||_F^2
    double final_loss = 0.0;
    std::size_t iterations = 0;
};

namespace detail {

// Gram matrix G = X^T X, fixed accumulation order (sequential over samples).
inline std::vector<double> gram_matrix(const CalibrationSet& calib) {
    const std::size_t c = calib.cols;
    std::vector<double> g(c * c, 0.0);
    for (std::size_t s = 0; s < calib.samples; ++s) {
        const double* row = calib.data.data() + s * c;
        for (std::size_t a = 0; a < c; ++a) {
            const double ra = row[a];
            if (ra == 0.0) continue;
            double* gr = g.data() + a * c;
            for (std::size_t b = 0; b < c; ++b) gr[b] += ra * row[b];
        }
    }
    return g;
}

// Largest eigenvalue of symmetric PSD G, deterministic power iteration.
inline double spectral_norm_estimate(const std::vector<double>& g, std::size_t c) {
    std::vector<double> v(c, 1.0), gv(c);
    double lambda = 0.0;
    for (int iter = 0; iter < 60; ++iter) {
        for (std::size_t a = 0; a < c; ++a) {
            double acc = 0.0;
            const double* gr = g.data() + a * c;
            for (std::size_t b = 0; b < c; ++b) acc += gr[b] * v[b];
            gv[a] = acc;
        }
        double norm = 0.0;
        for (double x : gv) norm += x * x;
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        lambda = norm;
        for (std::size_t a = 0; a < c; ++a) v[a] = gv[a] / norm;
    }
    return lambda;
}

}  // namespace detail

// Stage-4 masked layer-wise reconstruction: minimize
//   || dense X^T - (residual + salient) X^T ||_F^2  (+ ridge * ||kept||^2)
// over residual-kept entries only, by projected gradient descent with
// backtracking. The mask and the salient values never change; the loss is
// monotone non-increasing by construction.
inline ReconstructionResult reconstruct_layer(const WeightMatrix& dense, const PrunedLayer& layer,
                                              const CalibrationSet& calib,
                                              const ReconstructionSettings& s) {
    validate(dense);
    validate(calib);
    if (calib.cols != dense.cols)
        throw std::invalid_argument("reconstruct_layer: calibration cols mismatch");
    if (layer.residual.rows != dense.rows || layer.residual.cols != dense.cols)
        throw std::invalid_argument("reconstruct_layer: layer shape mismatch");
    if (!(s.step_size >= 0.0) || !(s.rel_tol > 0.0) || !(s.ridge >= 0.0))
        throw std::invalid_argument("reconstruct_layer: bad settings");

    const std::size_t rows = dense.rows, cols = dense.cols;
    const std::vector<double> gram = detail::gram_matrix(calib);

    // Fixed offset per row: target minus the salient contribution. The tuned
    // variable is the residual row; d = residual + offset, loss = sum d G d^T.
    // offset[i,:] = salient_dense[i,:] - dense[i,:].
    std::vector<double> offset(rows * cols, 0.0);
    for (std::size_t f = 0; f < rows * cols; ++f) offset[f] = -dense.data[f];
    if (!layer.salient.empty()) {
        std::size_t vi = 0;
        for (std::size_t f = 0; f < rows * cols; ++f)
            if (layer.salient.mask.keep[f]) offset[f] += layer.salient.values[vi++];
    }

    std::vector<double> cur = layer.residual.data;  // current residual values
    std::vector<double> diff(cols), grad(rows * cols), trial(rows * cols);

    auto loss_of = [&](const std::vector<double>& resid) {
        double total = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double* rrow = resid.data() + i * cols;
            const double* orow = offset.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) diff[j] = rrow[j] + orow[j];
            for (std::size_t a = 0; a < cols; ++a) {
                const double da = diff[a];
                if (da == 0.0) continue;
                double acc = 0.0;
                const double* gr = gram.data() + a * cols;
                for (std::size_t b = 0; b < cols; ++b) acc += gr[b] * diff[b];
                total += da * acc;
            }
            if (s.ridge > 0.0)
                for (std::size_t j = 0; j < cols; ++j)
                    if (layer.residual_mask.keep[i * cols + j]) total += s.ridge * rrow[j] * rrow[j];
        }
        return total;
    };

    // Reported losses are the optimized objective; at the default ridge = 0
    // that is exactly the Frobenius reconstruction error.
    double cur_loss = loss_of(cur);
    if (!std::isfinite(cur_loss)) throw NumericalError("reconstruct_layer: non-finite loss");
    const double initial_loss = cur_loss;

    double step = s.step_size;
    if (step == 0.0) {
        const double lmax = detail::spectral_norm_estimate(gram, cols);
        const double lipschitz = 2.0 * lmax + 2.0 * s.ridge;
        step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
    }

    std::size_t iterations = 0;
    for (std::size_t it = 0; it < s.max_iters; ++it) {
        // grad = 2 (resid + offset) G, projected onto the kept set.
        for (std::size_t i = 0; i < rows; ++i) {
            const double* rrow = cur.data() + i * cols;
            const double* orow = offset.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) diff[j] = rrow[j] + orow[j];
            double* grow = grad.data() + i * cols;
            for (std::size_t a = 0; a < cols; ++a) {
                if (!layer.residual_mask.keep[i * cols + a]) {
                    grow[a] = 0.0;
                    continue;
                }
                double acc = 0.0;
                const double* gr = gram.data() + a * cols;
                for (std::size_t b = 0; b < cols; ++b) acc += gr[b] * diff[b];
                grow[a] = 2.0 * acc + 2.0 * s.ridge * rrow[a];
            }
        }

        // Backtracking: accept the first step that does not increase the loss.
        double trial_step = step;
        double trial_loss = 0.0;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t f = 0; f < rows * cols; ++f) trial[f] = cur[f] - trial_step * grad[f];
            trial_loss = loss_of(trial);
            if (!std::isfinite(trial_loss))
                throw NumericalError("reconstruct_layer: non-finite loss");
            if (trial_loss <= cur_loss) {
                accepted = true;
                break;
            }
            trial_step *= 0.5;
        }
        if (!accepted) break;

        const double prev = cur_loss;
        cur.swap(trial);
        cur_loss = trial_loss;
        ++iterations;
        if (prev > 0.0 && (prev - cur_loss) / prev < s.rel_tol) break;
        if (prev == 0.0) break;
    }

    ReconstructionResult out;
    out.tuned = layer;
    out.tuned.residual.data = cur;
    // Projection invariant: non-kept entries stayed exactly zero.
    for (std::size_t f = 0; f < rows * cols; ++f)
        if (!layer.residual_mask.keep[f] && out.tuned.residual.data[f] != 0.0)
            throw NumericalError("reconstruct_layer: mask violated");
    out.initial_loss = initial_loss;
    out.iterations = iterations;
    out.final_loss = cur_loss;
    return out;
}

}  // namespace nmsparse
