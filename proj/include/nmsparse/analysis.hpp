#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "nmsparse/patterns.hpp"
#include "nmsparse/tensor.hpp"

namespace nmsparse {

// Stacked-pattern injection check: every concatenation of (big.m / small.m)
// valid small-block patterns must form a valid big-block pattern, and the
// images must be pairwise distinct. For 2:4 into 8:16 that is the 1296-into-
// 12870 embedding behind the flexibility comparison.
struct SupersetCheck {
    std::uint64_t stacked_count = 0;   // config_count(small)^repeats
    std::uint64_t valid_images = 0;    // stacked patterns that are valid big patterns
    std::uint64_t distinct_images = 0; // distinct big-pattern ranks reached
    bool holds() const {
        return valid_images == stacked_count && distinct_images == stacked_count;
    }
};

inline SupersetCheck verify_stacked_superset(PatternShape small, PatternShape big) {
    validate(small);
    validate(big);
    if (big.m_block % small.m_block != 0)
        throw std::invalid_argument("verify_stacked_superset: block sizes incompatible");
    const std::uint32_t repeats = big.m_block / small.m_block;
    if (small.n_keep * repeats != big.n_keep)
        throw std::invalid_argument("verify_stacked_superset: kept counts incompatible");

    const PatternCodec small_codec(small);
    const PatternCodec big_codec(big);
    const std::uint64_t small_count = small_codec.config_count();

    SupersetCheck out;
    out.stacked_count = stacked_config_count(small, repeats);
    std::vector<std::uint8_t> seen(big_codec.config_count(), 0);

    // Odometer over the per-block small ranks.
    std::vector<std::uint64_t> digits(repeats, 0);
    std::vector<std::uint32_t> kept(big.n_keep);
    std::vector<std::uint32_t> sub(small.n_keep);
    for (std::uint64_t iter = 0; iter < out.stacked_count; ++iter) {
        std::size_t pos = 0;
        for (std::uint32_t b = 0; b < repeats; ++b) {
            small_codec.unrank_into(digits[b], sub.data());
            for (std::uint32_t idx : sub) kept[pos++] = b * small.m_block + idx;
        }
        // Concatenation in block order is already strictly increasing.
        const std::uint64_t big_rank = big_codec.rank(kept);
        ++out.valid_images;
        if (!seen[big_rank]) {
            seen[big_rank] = 1;
            ++out.distinct_images;
        }
        for (std::uint32_t b = 0; b < repeats; ++b) {
            if (++digits[b] < small_count) break;
            digits[b] = 0;
        }
    }
    return out;
}

// Flexibility dominance on random score blocks: the best big-pattern kept-score
// sum must be >= the best stacked small-pattern sum, with both sides verified
// against exhaustive enumeration over every admissible pattern.
struct DominanceCheck {
    std::uint64_t blocks = 0;
    std::uint64_t strict = 0;      // blocks where the big pattern wins strictly
    std::uint64_t violations = 0;  // dominance failures (must stay 0)
    bool enumeration_consistent = true;  // exhaustive best == top-k shortcut
};

inline DominanceCheck flexibility_dominance_check(PatternShape small, PatternShape big,
                                                  std::uint64_t blocks, std::uint64_t seed) {
    validate(small);
    validate(big);
    const std::uint32_t repeats = big.m_block / small.m_block;
    const PatternCodec small_codec(small);
    const PatternCodec big_codec(big);

    // Precompute every kept-index set once; enumeration then is pure sums.
    std::vector<std::vector<std::uint32_t>> big_sets(big_codec.config_count());
    for (std::uint64_t r = 0; r < big_codec.config_count(); ++r) big_sets[r] = big_codec.unrank(r);
    std::vector<std::vector<std::uint32_t>> small_sets(small_codec.config_count());
    for (std::uint64_t r = 0; r < small_codec.config_count(); ++r)
        small_sets[r] = small_codec.unrank(r);

    std::mt19937_64 eng(seed);
    std::vector<double> scores(big.m_block);
    DominanceCheck out;
    out.blocks = blocks;

    for (std::uint64_t bi = 0; bi < blocks; ++bi) {
        for (double& s : scores) s = detail::uniform01(eng());

        double best_big = -1.0;
        for (const auto& set : big_sets) {
            double sum = 0.0;
            for (std::uint32_t idx : set) sum += scores[idx];
            if (sum > best_big) best_big = sum;
        }
        // Shortcut: sum of the top n_keep scores.
        std::vector<double> sorted(scores);
        std::partial_sort(sorted.begin(), sorted.begin() + big.n_keep, sorted.end(),
                          std::greater<double>());
        double top_sum = 0.0;
        for (std::uint32_t k = 0; k < big.n_keep; ++k) top_sum += sorted[k];
        if (std::abs(best_big - top_sum) > 1e-12 * std::max(1.0, std::abs(top_sum)))
            out.enumeration_consistent = false;

        // Exhaustive over all config^repeats stacked combinations, via
        // precomputed per-sub-block pattern sums.
        const std::uint64_t small_count = small_codec.config_count();
        std::vector<double> subsum(repeats * small_count);
        for (std::uint32_t b = 0; b < repeats; ++b)
            for (std::uint64_t r = 0; r < small_count; ++r) {
                double sum = 0.0;
                for (std::uint32_t idx : small_sets[r]) sum += scores[b * small.m_block + idx];
                subsum[b * small_count + r] = sum;
            }
        double best_stacked = -1.0;
        std::vector<std::uint64_t> digits(repeats, 0);
        const std::uint64_t stacked_total = stacked_config_count(small, repeats);
        for (std::uint64_t it = 0; it < stacked_total; ++it) {
            double sum = 0.0;
            for (std::uint32_t b = 0; b < repeats; ++b) sum += subsum[b * small_count + digits[b]];
            if (sum > best_stacked) best_stacked = sum;
            for (std::uint32_t b = 0; b < repeats; ++b) {
                if (++digits[b] < small_count) break;
                digits[b] = 0;
            }
        }

        if (best_big + 1e-12 < best_stacked) ++out.violations;
        if (best_big > best_stacked + 1e-12) ++out.strict;
    }
    return out;
}

}  // namespace nmsparse
