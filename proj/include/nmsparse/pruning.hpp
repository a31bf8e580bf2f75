#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nmsparse/importance.hpp"
#include "nmsparse/patterns.hpp"
#include "nmsparse/tensor.hpp"

namespace nmsparse {

constexpr std::uint32_t kSalientBlock = 256;

// Salient weights kept outside the residual matrix, in a K:256 structured
// pattern. values are in block order, kept-index ascending within each block.
// n_keep == 0 marks the store as absent.
struct SalientStore {
    PatternShape shape{};
    NMMask mask;
    std::vector<double> values;

    bool empty() const { return shape.n_keep == 0; }
};

struct PrunedLayer {
    WeightMatrix residual;  // zeros at pruned and salient positions
    NMMask residual_mask;
    SalientStore salient;
    double correction_factor = 1.0;
};

namespace detail {

// Indices of the top-n scores within [begin, begin+m), ties broken toward the
// lower index, returned ascending. Entries may be -inf (excluded positions).
inline void top_n_indices(const double* scores, std::uint32_t m, std::uint32_t n,
                          std::vector<std::uint32_t>& scratch, std::vector<std::uint32_t>& out) {
    scratch.resize(m);
    for (std::uint32_t j = 0; j < m; ++j) scratch[j] = j;
    std::partial_sort(scratch.begin(), scratch.begin() + n, scratch.end(),
                      [scores](std::uint32_t a, std::uint32_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });
    out.assign(scratch.begin(), scratch.begin() + n);
    std::sort(out.begin(), out.end());
}

}  // namespace detail

// Per row, per 256-length block: record the K highest-scoring positions and
// their original weight values. Ties go to the lowest column index.
inline SalientStore extract_salient(const WeightMatrix& w, const ScoreMatrix& scores,
                                    PatternShape shape) {
    validate(w);
    validate(shape);
    if (scores.rows != w.rows || scores.cols != w.cols)
        throw std::invalid_argument("extract_salient: score shape mismatch");
    if (shape.m_block != kSalientBlock)
        throw std::invalid_argument("extract_salient: salient block size must be 256");
    if (w.cols % shape.m_block != 0)
        throw std::invalid_argument("extract_salient: cols not divisible by 256");

    SalientStore store;
    store.shape = shape;
    store.mask = NMMask{shape, w.rows, w.cols, std::vector<std::uint8_t>(w.size(), 0)};
    store.values.reserve(w.rows * (w.cols / shape.m_block) * shape.n_keep);

    std::vector<std::uint32_t> scratch, kept;
    for (std::size_t i = 0; i < w.rows; ++i) {
        for (std::size_t base = 0; base < w.cols; base += shape.m_block) {
            const double* s = scores.data.data() + i * w.cols + base;
            detail::top_n_indices(s, shape.m_block, shape.n_keep, scratch, kept);
            for (std::uint32_t idx : kept) {
                store.mask.keep[i * w.cols + base + idx] = 1;
                store.values.push_back(w.at(i, base + idx));
            }
        }
    }
    return store;
}

// Per M-block keep the N highest-scoring non-salient positions (salient
// positions never compete), zero everything else. Errors if a block has fewer
// than N non-salient candidates.
inline std::pair<WeightMatrix, NMMask> prune_residual(const WeightMatrix& w,
                                                      const ScoreMatrix& scores,
                                                      const SalientStore* salient,
                                                      PatternShape shape) {
    validate(w);
    validate(shape);
    if (scores.rows != w.rows || scores.cols != w.cols)
        throw std::invalid_argument("prune_residual: score shape mismatch");
    if (w.cols % shape.m_block != 0)
        throw std::invalid_argument("prune_residual: cols not divisible by m_block");
    const bool has_salient = salient != nullptr && !salient->empty();
    if (has_salient &&
        (salient->mask.rows != w.rows || salient->mask.cols != w.cols))
        throw std::invalid_argument("prune_residual: salient mask shape mismatch");

    WeightMatrix residual(w.rows, w.cols);
    NMMask mask{shape, w.rows, w.cols, std::vector<std::uint8_t>(w.size(), 0)};
    constexpr double kExcluded = -std::numeric_limits<double>::infinity();

    std::vector<double> block_scores(shape.m_block);
    std::vector<std::uint32_t> scratch, kept;
    for (std::size_t i = 0; i < w.rows; ++i) {
        for (std::size_t base = 0; base < w.cols; base += shape.m_block) {
            std::uint32_t candidates = 0;
            for (std::uint32_t j = 0; j < shape.m_block; ++j) {
                const std::size_t flat = i * w.cols + base + j;
                const bool excluded = has_salient && salient->mask.keep[flat] != 0;
                block_scores[j] = excluded ? kExcluded : scores.data[flat];
                candidates += excluded ? 0u : 1u;
            }
            if (candidates < shape.n_keep)
                throw std::runtime_error(
                    "prune_residual: block has fewer non-salient candidates than n_keep");
            detail::top_n_indices(block_scores.data(), shape.m_block, shape.n_keep, scratch,
                                  kept);
            for (std::uint32_t idx : kept) {
                const std::size_t flat = i * w.cols + base + idx;
                mask.keep[flat] = 1;
                residual.data[flat] = w.data[flat];
            }
        }
    }
    return {std::move(residual), std::move(mask)};
}

// Variance of the residual tensor: either over all entries including the
// structural zeros (the tensor as it participates in the matmul) or over the
// surviving values only (ablation reading).
inline double residual_variance(const PrunedLayer& layer, bool include_zeros) {
    if (include_zeros) return tensor_variance(layer.residual);
    double mean = 0.0;
    std::size_t count = 0;
    for (std::size_t f = 0; f < layer.residual.size(); ++f)
        if (layer.residual_mask.keep[f]) {
            mean += layer.residual.data[f];
            ++count;
        }
    if (count == 0) throw std::invalid_argument("residual_variance: empty mask");
    mean /= static_cast<double>(count);
    double acc = 0.0;
    for (std::size_t f = 0; f < layer.residual.size(); ++f)
        if (layer.residual_mask.keep[f]) {
            const double d = layer.residual.data[f] - mean;
            acc += d * d;
        }
    return acc / static_cast<double>(count);
}

// Rescales every residual-kept value by
//   f = sqrt(dense_variance / (Var(residual) + epsilon))
// restoring the dense tensor's variance after pruning. Salient values are
// untouched; f is recorded on the layer.
inline PrunedLayer variance_correct(PrunedLayer layer, double dense_variance, double epsilon,
                                    bool include_zeros = true) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("variance_correct: epsilon must be > 0");
    if (!(dense_variance >= 0.0) || !std::isfinite(dense_variance))
        throw std::invalid_argument("variance_correct: bad dense_variance");
    const double resid_var = residual_variance(layer, include_zeros);
    const double factor = std::sqrt(dense_variance / (resid_var + epsilon));
    for (std::size_t f = 0; f < layer.residual.size(); ++f)
        if (layer.residual_mask.keep[f]) layer.residual.data[f] *= factor;
    layer.correction_factor = factor;
    return layer;
}

// Storage accounting for one encoded layer. Structured metadata uses the
// combinadic rank widths; the unstructured baseline is a coordinate list at
// unstructured_index_bits per salient weight.
struct StorageReport {
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    PatternShape residual_shape{};
    std::uint32_t salient_k = 0;  // 0 = no salient store

    std::uint64_t residual_blocks = 0;
    std::uint32_t residual_bits_per_block = 0;
    std::uint64_t residual_metadata_bits = 0;
    std::uint64_t residual_value_count = 0;

    std::uint64_t salient_blocks = 0;
    std::uint32_t salient_bits_per_block = 0;
    std::uint64_t salient_metadata_bits = 0;
    std::uint64_t salient_value_count = 0;

    std::uint64_t unstructured_index_bits = 0;
    std::uint64_t unstructured_metadata_bits = 0;  // salient_value_count * index bits

    std::uint64_t value_bits_float32 = 0;
    std::uint64_t value_bits_float64 = 0;

    double metadata_bits_per_element = 0.0;  // structured residual + salient
    double kept_fraction = 0.0;
};

inline StorageReport metadata_bits_report(const PrunedLayer& layer,
                                          std::uint64_t unstructured_index_bits) {
    StorageReport r;
    r.rows = layer.residual.rows;
    r.cols = layer.residual.cols;
    r.residual_shape = layer.residual_mask.shape;
    validate(r.residual_shape);
    if (r.cols % r.residual_shape.m_block != 0)
        throw std::invalid_argument("metadata_bits_report: cols not divisible by m_block");

    r.residual_blocks = r.rows * (r.cols / r.residual_shape.m_block);
    r.residual_bits_per_block = bits_per_element(r.residual_shape).numer;
    r.residual_metadata_bits = r.residual_blocks * r.residual_bits_per_block;
    r.residual_value_count = r.residual_blocks * r.residual_shape.n_keep;

    if (!layer.salient.empty()) {
        const PatternShape ss = layer.salient.shape;
        validate(ss);
        if (r.cols % ss.m_block != 0)
            throw std::invalid_argument("metadata_bits_report: cols not divisible by 256");
        r.salient_k = ss.n_keep;
        r.salient_blocks = r.rows * (r.cols / ss.m_block);
        r.salient_bits_per_block = ceil_log2_u128(binomial_u128(ss.m_block, ss.n_keep));
        r.salient_metadata_bits = r.salient_blocks * r.salient_bits_per_block;
        r.salient_value_count = r.salient_blocks * ss.n_keep;
    }

    r.unstructured_index_bits = unstructured_index_bits;
    r.unstructured_metadata_bits = r.salient_value_count * unstructured_index_bits;

    const std::uint64_t values = r.residual_value_count + r.salient_value_count;
    r.value_bits_float32 = values * 32;
    r.value_bits_float64 = values * 64;

    const double elements = static_cast<double>(r.rows) * static_cast<double>(r.cols);
    if (elements > 0) {
        r.metadata_bits_per_element =
            static_cast<double>(r.residual_metadata_bits + r.salient_metadata_bits) / elements;
        r.kept_fraction = static_cast<double>(values) / elements;
    }
    return r;
}

}  // namespace nmsparse
