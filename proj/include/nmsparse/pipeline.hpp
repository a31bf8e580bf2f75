#pragma once

#include <optional>
#include <stdexcept>

#include "nmsparse/importance.hpp"
#include "nmsparse/pruning.hpp"
#include "nmsparse/reconstruct.hpp"
#include "nmsparse/tensor.hpp"

namespace nmsparse {

enum class Scorer { Magnitude, Ria };

struct PipelineConfig {
    PatternShape residual_shape{2, 4};
    std::optional<PatternShape> salient_shape;  // K:256, or absent
    Scorer scorer = Scorer::Magnitude;
    bool use_equalization = false;
    bool use_variance_correction = false;
    bool variance_includes_zeros = true;  // Var(W_residual) counts structural zeros
    bool run_reconstruction = false;
    double epsilon = 1e-8;
    double activation_power = 0.5;
    double clamp_min = kDefaultClampMin;
    ReconstructionSettings reconstruction;
};

inline void validate(const PipelineConfig& cfg) {
    validate(cfg.residual_shape);
    if (cfg.salient_shape) {
        validate(*cfg.salient_shape);
        if (cfg.salient_shape->m_block != kSalientBlock)
            throw std::invalid_argument("PipelineConfig: salient block size must be 256");
    }
    if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("PipelineConfig: epsilon must be > 0");
    if (!(cfg.activation_power >= 0.0))
        throw std::invalid_argument("PipelineConfig: activation_power must be >= 0");
    if (!(cfg.clamp_min > 0.0)) throw std::invalid_argument("PipelineConfig: clamp_min must be > 0");
}

// Side metrics from a pipeline run; the layer itself is the primary output.
struct PipelineMetrics {
    bool reconstruction_ran = false;
    double reconstruction_initial_loss = 0.0;
    double reconstruction_final_loss = 0.0;
    std::size_t reconstruction_iterations = 0;
};

// Four-stage pruning pipeline:
//   1. equalization scales from calibration stats, scoring copy W_ec (optional)
//   2. importance scoring on W_ec (or W), salient K:256 extraction, residual
//      N:M pruning of the non-salient positions
//   3. variance correction of the residual (optional)
//   4. masked least-squares reconstruction on the calibration set (optional)
// Stored values always come from the original W; equalization touches scores
// only. Deterministic for fixed inputs.
inline PrunedLayer run_pipeline(const WeightMatrix& w, const CalibrationSet& calib,
                                const PipelineConfig& cfg, PipelineMetrics* metrics = nullptr) {
    validate(w);
    validate(calib);
    validate(cfg);
    if (calib.cols != w.cols) throw std::invalid_argument("run_pipeline: calibration cols mismatch");
    if (w.cols % cfg.residual_shape.m_block != 0)
        throw std::invalid_argument("run_pipeline: cols not divisible by residual block");
    if (cfg.salient_shape && w.cols % cfg.salient_shape->m_block != 0)
        throw std::invalid_argument("run_pipeline: cols not divisible by salient block");

    const ChannelStats stats = channel_stats(calib);

    // Stage 1: equalized scoring copy. Activations stay unscaled.
    WeightMatrix scoring_input = w;
    if (cfg.use_equalization) {
        const EqualizationScales scales = equalization_scales(w, stats, cfg.clamp_min);
        scoring_input = equalize_for_scoring(w, scales);
    }

    // Stage 2: scores, salient extraction, residual pruning.
    const ScoreMatrix scores =
        cfg.scorer == Scorer::Magnitude
            ? magnitude_scores(scoring_input)
            : ria_scores(scoring_input, stats, cfg.activation_power, cfg.clamp_min);

    PrunedLayer layer;
    if (cfg.salient_shape)
        layer.salient = extract_salient(w, scores, *cfg.salient_shape);
    auto [residual, mask] =
        prune_residual(w, scores, cfg.salient_shape ? &layer.salient : nullptr,
                       cfg.residual_shape);
    layer.residual = std::move(residual);
    layer.residual_mask = std::move(mask);
    layer.correction_factor = 1.0;

    // Stage 3: variance correction.
    if (cfg.use_variance_correction)
        layer = variance_correct(std::move(layer), tensor_variance(w), cfg.epsilon,
                                 cfg.variance_includes_zeros);

    // Stage 4: reconstruction against the original dense layer.
    if (cfg.run_reconstruction) {
        ReconstructionResult res = reconstruct_layer(w, layer, calib, cfg.reconstruction);
        layer = std::move(res.tuned);
        if (metrics) {
            metrics->reconstruction_ran = true;
            metrics->reconstruction_initial_loss = res.initial_loss;
            metrics->reconstruction_final_loss = res.final_loss;
            metrics->reconstruction_iterations = res.iterations;
        }
    } else if (metrics) {
        *metrics = PipelineMetrics{};
    }
    return layer;
}

}  // namespace nmsparse
