#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmsparse {

// N:M block pattern. Convention throughout: n_keep is the KEPT count per
// block, so 2:4 keeps 2 of every 4 (50% sparsity) and 8:16 keeps 8 of 16.
struct PatternShape {
    std::uint32_t n_keep = 0;
    std::uint32_t m_block = 0;

    friend bool operator==(const PatternShape&, const PatternShape&) = default;
};

inline void validate(PatternShape s) {
    if (s.m_block < 1 || s.n_keep < 1 || s.n_keep > s.m_block)
        throw std::invalid_argument("PatternShape: need 1 <= n_keep <= m_block");
}

using u128 = unsigned __int128;

inline unsigned bit_width_u128(u128 v) {
    unsigned n = 0;
    while (v) {
        v >>= 1;
        ++n;
    }
    return n;
}

inline std::string to_string_u128(u128 v) {
    if (v == 0) return "0";
    std::string s;
    while (v) {
        s.insert(s.begin(), static_cast<char>('0' + static_cast<unsigned>(v % 10)));
        v /= 10;
    }
    return s;
}

// Exact C(n, k) via the running-product identity (the partial product after
// step i is C(n-k+i, i), an integer). Throws on 128-bit overflow.
inline u128 binomial_u128(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    if (k > n - k) k = n - k;
    u128 acc = 1;
    constexpr u128 kMax = ~static_cast<u128>(0);
    for (std::uint64_t i = 1; i <= k; ++i) {
        const u128 factor = n - k + i;
        if (acc > kMax / factor) throw std::overflow_error("binomial_u128: exceeds 128 bits");
        acc = acc * factor / i;
    }
    return acc;
}

// C(M, N): number of admissible block configurations. Exact integer
// arithmetic; errors if the count does not fit 64 bits.
inline std::uint64_t config_count(PatternShape s) {
    validate(s);
    const u128 c = binomial_u128(s.m_block, s.n_keep);
    if (c > std::numeric_limits<std::uint64_t>::max())
        throw std::overflow_error("config_count: exceeds 64 bits");
    return static_cast<std::uint64_t>(c);
}

// config_count(shape)^repeats, the configuration count of `repeats` stacked
// blocks (e.g. four stacked 2:4 blocks give 6^4 = 1296).
inline std::uint64_t stacked_config_count(PatternShape s, std::uint32_t repeats) {
    if (repeats < 1) throw std::invalid_argument("stacked_config_count: repeats must be >= 1");
    const std::uint64_t base = config_count(s);
    std::uint64_t acc = 1;
    for (std::uint32_t i = 0; i < repeats; ++i) {
        if (base != 0 && acc > std::numeric_limits<std::uint64_t>::max() / base)
            throw std::overflow_error("stacked_config_count: exceeds 64 bits");
        acc *= base;
    }
    return acc;
}

// ceil(log2(x)) for x >= 1.
inline std::uint32_t ceil_log2_u128(u128 x) {
    if (x == 0) throw std::invalid_argument("ceil_log2_u128: zero");
    return bit_width_u128(x - 1);
}

// Exact metadata rate as a rational: ceil(log2 C(M,N)) bits per block over M
// elements. 2:4 -> 3/4, 8:16 -> 14/16.
struct BitRate {
    std::uint32_t numer = 0;  // bits per block
    std::uint32_t denom = 1;  // block size M

    double value() const { return static_cast<double>(numer) / denom; }
};

inline BitRate bits_per_element(PatternShape s) {
    validate(s);
    return BitRate{ceil_log2_u128(binomial_u128(s.m_block, s.n_keep)), s.m_block};
}

// Combinadic codec between N-element kept-index sets of a block and integers
// in [0, C(M,N)), in colexicographic order:
//
//   rank(kept) = sum_{k=0}^{N-1} C(kept[k], k+1)      (kept ascending)
//
// Unranking runs the greedy inverse from the highest position down. Colex
// order is pinned by the file format; implementations must agree bit-exactly.
//
// UInt must be wide enough for C(M,N); the constructor throws otherwise.
// PatternCodec (uint64_t) covers every M <= 64; WidePatternCodec (u128)
// covers the K:256 salient shapes (C(256,16) needs 84 bits).
template <class UInt>
class BasicPatternCodec {
  public:
    explicit BasicPatternCodec(PatternShape shape) : shape_(shape) {
        validate(shape);
        const std::size_t n_rows = shape.m_block + 1;
        const std::size_t n_cols = shape.n_keep + 1;
        table_.assign(n_rows * n_cols, 0);
        overflow_.assign(n_rows * n_cols, 0);
        // Pascal triangle truncated at k = n_keep, with overflow poisoning.
        for (std::size_t n = 0; n < n_rows; ++n) {
            cell(n, 0) = 1;
            for (std::size_t k = 1; k < n_cols && k <= n; ++k) {
                const UInt a = cell(n - 1, k - 1);
                const UInt b = cell(n - 1, k);
                const UInt c = a + b;
                if (over(n - 1, k - 1) || over(n - 1, k) || c < a) {
                    over(n, k) = 1;
                } else {
                    cell(n, k) = c;
                }
            }
        }
        if (over(shape.m_block, shape.n_keep))
            throw std::overflow_error("pattern codec: C(M,N) exceeds the rank integer width");
        count_ = cell(shape.m_block, shape.n_keep);
        bits_ = count_ <= 1 ? 0 : width(count_ - 1);
    }

    PatternShape shape() const { return shape_; }
    UInt config_count() const { return count_; }
    std::uint32_t bits_per_block() const { return bits_; }

    UInt rank(std::span<const std::uint32_t> kept) const {
        if (kept.size() != shape_.n_keep)
            throw std::invalid_argument("rank: kept set has wrong cardinality");
        UInt r = 0;
        std::uint32_t prev = 0;
        for (std::size_t k = 0; k < kept.size(); ++k) {
            const std::uint32_t idx = kept[k];
            if (idx >= shape_.m_block) throw std::invalid_argument("rank: index out of block");
            if (k > 0 && idx <= prev)
                throw std::invalid_argument("rank: indices must be strictly increasing");
            prev = idx;
            r += binom(idx, static_cast<std::uint32_t>(k + 1));
        }
        return r;
    }

    void unrank_into(UInt r, std::uint32_t* out) const {
        if (r >= count_) throw std::out_of_range("unrank: rank out of range");
        UInt rem = r;
        int c = static_cast<int>(shape_.m_block) - 1;
        for (std::uint32_t k = shape_.n_keep; k >= 1; --k) {
            while (binom(static_cast<std::uint32_t>(c), k) > rem) --c;
            out[k - 1] = static_cast<std::uint32_t>(c);
            rem -= binom(static_cast<std::uint32_t>(c), k);
            --c;
        }
    }

    std::vector<std::uint32_t> unrank(UInt r) const {
        std::vector<std::uint32_t> out(shape_.n_keep);
        unrank_into(r, out.data());
        return out;
    }

    UInt binom(std::uint32_t n, std::uint32_t k) const {
        if (k > shape_.n_keep || n > shape_.m_block) return 0;  // outside table => C isn't needed
        if (k > n) return 0;
        return cell(n, k);
    }

  private:
    static std::uint32_t width(UInt v) {
        if constexpr (sizeof(UInt) > 8) {
            return bit_width_u128(static_cast<u128>(v));
        } else {
            return static_cast<std::uint32_t>(std::bit_width(static_cast<std::uint64_t>(v)));
        }
    }

    UInt& cell(std::size_t n, std::size_t k) { return table_[n * (shape_.n_keep + 1) + k]; }
    UInt cell(std::size_t n, std::size_t k) const { return table_[n * (shape_.n_keep + 1) + k]; }
    std::uint8_t& over(std::size_t n, std::size_t k) {
        return overflow_[n * (shape_.n_keep + 1) + k];
    }
    std::uint8_t over(std::size_t n, std::size_t k) const {
        return overflow_[n * (shape_.n_keep + 1) + k];
    }

    PatternShape shape_;
    std::vector<UInt> table_;
    std::vector<std::uint8_t> overflow_;
    UInt count_ = 0;
    std::uint32_t bits_ = 0;
};

using PatternCodec = BasicPatternCodec<std::uint64_t>;
using WidePatternCodec = BasicPatternCodec<u128>;

// Spec'd free-function faces of the codec.
inline std::uint64_t rank_pattern(std::span<const std::uint32_t> kept, PatternShape s) {
    return PatternCodec(s).rank(kept);
}

inline std::vector<std::uint32_t> unrank_pattern(std::uint64_t r, PatternShape s) {
    return PatternCodec(s).unrank(r);
}

// Binary keep-mask with exactly n_keep set bits per contiguous m_block-length
// block along each row. cols must be divisible by m_block.
struct NMMask {
    PatternShape shape;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> keep;  // rows * cols, values 0/1

    bool kept(std::size_t i, std::size_t j) const { return keep[i * cols + j] != 0; }
};

inline void validate(const NMMask& m) {
    validate(m.shape);
    if (m.cols % m.shape.m_block != 0)
        throw std::invalid_argument("NMMask: cols not divisible by m_block");
    if (m.keep.size() != m.rows * m.cols)
        throw std::invalid_argument("NMMask: bit array length != rows*cols");
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t b = 0; b < m.cols; b += m.shape.m_block) {
            std::uint32_t set = 0;
            for (std::size_t j = 0; j < m.shape.m_block; ++j) set += m.keep[i * m.cols + b + j];
            if (set != m.shape.n_keep)
                throw std::invalid_argument("NMMask: block does not keep exactly n_keep bits");
        }
    }
}

template <class UInt>
inline NMMask mask_from_ranks(const BasicPatternCodec<UInt>& codec, std::span<const UInt> ranks,
                              std::size_t rows, std::size_t cols) {
    const PatternShape s = codec.shape();
    if (cols % s.m_block != 0)
        throw std::invalid_argument("mask_from_ranks: cols not divisible by m_block");
    const std::size_t blocks = rows * (cols / s.m_block);
    if (ranks.size() != blocks)
        throw std::invalid_argument("mask_from_ranks: rank stream length mismatch");

    NMMask m{s, rows, cols, std::vector<std::uint8_t>(rows * cols, 0)};
    std::vector<std::uint32_t> kept(s.n_keep);
    std::size_t b = 0;
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t base = 0; base < cols; base += s.m_block, ++b) {
            codec.unrank_into(ranks[b], kept.data());
            for (std::uint32_t idx : kept) m.keep[i * cols + base + idx] = 1;
        }
    }
    return m;
}

template <class UInt>
inline std::vector<UInt> ranks_from_mask(const BasicPatternCodec<UInt>& codec, const NMMask& m) {
    const PatternShape s = codec.shape();
    if (m.shape != s) throw std::invalid_argument("ranks_from_mask: shape mismatch");
    validate(m);
    std::vector<UInt> ranks;
    ranks.reserve(m.rows * (m.cols / s.m_block));
    std::vector<std::uint32_t> kept;
    kept.reserve(s.n_keep);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t base = 0; base < m.cols; base += s.m_block) {
            kept.clear();
            for (std::uint32_t j = 0; j < s.m_block; ++j)
                if (m.keep[i * m.cols + base + j]) kept.push_back(j);
            ranks.push_back(codec.rank(kept));
        }
    }
    return ranks;
}

inline NMMask mask_from_rank_stream(std::span<const std::uint64_t> ranks, PatternShape s,
                                    std::size_t rows, std::size_t cols) {
    return mask_from_ranks(PatternCodec(s), ranks, rows, cols);
}

inline std::vector<std::uint64_t> rank_stream_from_mask(const NMMask& m) {
    return ranks_from_mask(PatternCodec(m.shape), m);
}

// Parses "N:M" with N = kept count; rejects N > M and malformed strings.
inline PatternShape parse_pattern(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 >= text.size())
        throw std::invalid_argument("pattern must look like N:M, got '" + text + "'");
    PatternShape s;
    const char* b = text.data();
    auto r1 = std::from_chars(b, b + colon, s.n_keep);
    auto r2 = std::from_chars(b + colon + 1, b + text.size(), s.m_block);
    if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != b + colon ||
        r2.ptr != b + text.size())
        throw std::invalid_argument("pattern must look like N:M, got '" + text + "'");
    validate(s);
    return s;
}

inline std::string format_pattern(PatternShape s) {
    return std::to_string(s.n_keep) + ":" + std::to_string(s.m_block);
}

}  // namespace nmsparse
