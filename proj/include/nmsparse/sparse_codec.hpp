#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nmsparse/dwt_io.hpp"
#include "nmsparse/patterns.hpp"
#include "nmsparse/pruning.hpp"

namespace nmsparse {

class CodecError : public std::runtime_error {
  public:
    enum class Kind { TruncatedStream, InvalidRank, HeaderMismatch };

    CodecError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

// "NMS1" packed sparse tensor:
//   byte 0..3   magic 'N' 'M' 'S' '1'
//   byte 4..5   u16 version (= 1)
//   byte 6..9   u32 rows
//   byte 10..13 u32 cols
//   byte 14..15 u16 residual n_keep
//   byte 16..17 u16 residual m_block
//   byte 18..19 u16 salient k (0 = no salient store; salient block size is 256)
//   byte 20     u8 dtype tag (0 = float32, 1 = float64)
//   byte 21..28 f64 correction factor, IEEE-754 little-endian
//   then four streams, each prefixed by a u64 little-endian byte length:
//     1. residual values   block order, kept-index ascending, little-endian
//     2. residual ranks    combinadic colex ranks, bits_per_block bits each,
//                          lowest bit first, each ROW padded to a byte boundary
//     3. salient values    same ordering over K:256 blocks
//     4. salient ranks     same bit scheme with the K:256 codec
// All integers little-endian. A given mask has exactly one encoding.
struct SparseEncodedTensor {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    PatternShape residual_shape{};
    std::uint32_t salient_k = 0;
    DType dtype = DType::Float64;
    double correction_factor = 1.0;

    std::vector<std::uint8_t> residual_values;
    std::vector<std::uint8_t> residual_ranks;
    std::vector<std::uint8_t> salient_values;
    std::vector<std::uint8_t> salient_ranks;
};

namespace detail {

class BitWriter {
  public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

    void write(u128 value, std::uint32_t bits) {
        for (std::uint32_t b = 0; b < bits; ++b) {
            if (bit_ == 0) out_.push_back(0);
            if ((value >> b) & 1) out_.back() |= static_cast<std::uint8_t>(1u << bit_);
            bit_ = (bit_ + 1) & 7;
        }
    }

    void align_to_byte() { bit_ = 0; }

  private:
    std::vector<std::uint8_t>& out_;
    std::uint32_t bit_ = 0;
};

class BitReader {
  public:
    explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    u128 read(std::uint32_t bits) {
        u128 v = 0;
        for (std::uint32_t b = 0; b < bits; ++b) {
            if (byte_ >= bytes_.size())
                throw CodecError(CodecError::Kind::TruncatedStream, "rank stream truncated");
            if ((bytes_[byte_] >> bit_) & 1) v |= static_cast<u128>(1) << b;
            if (++bit_ == 8) {
                bit_ = 0;
                ++byte_;
            }
        }
        return v;
    }

    void align_to_byte() {
        if (bit_ != 0) {
            bit_ = 0;
            ++byte_;
        }
    }

    std::size_t bytes_consumed() const { return byte_ + (bit_ != 0 ? 1 : 0); }

  private:
    std::span<const std::uint8_t> bytes_;
    std::size_t byte_ = 0;
    std::uint32_t bit_ = 0;
};

inline void append_value(std::vector<std::uint8_t>& out, double v, DType dtype) {
    if (dtype == DType::Float64) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    } else {
        const float fv = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &fv, 4);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
}

inline double read_value(const std::uint8_t* p, DType dtype) {
    if (dtype == DType::Float64) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    float fv;
    std::memcpy(&fv, &bits, 4);
    return static_cast<double>(fv);
}

// Packs one mask + value store into value/rank streams. Values must be in
// block order already (as PrunedLayer and SalientStore guarantee).
template <class UInt>
inline void pack_streams(const BasicPatternCodec<UInt>& codec, const NMMask& mask,
                         const double* dense_values, const std::vector<double>* packed_values,
                         DType dtype, std::vector<std::uint8_t>& values_out,
                         std::vector<std::uint8_t>& ranks_out) {
    const PatternShape s = codec.shape();
    BitWriter bw(ranks_out);
    std::vector<std::uint32_t> kept;
    kept.reserve(s.n_keep);
    std::size_t vi = 0;
    for (std::size_t i = 0; i < mask.rows; ++i) {
        for (std::size_t base = 0; base < mask.cols; base += s.m_block) {
            kept.clear();
            for (std::uint32_t j = 0; j < s.m_block; ++j)
                if (mask.keep[i * mask.cols + base + j]) kept.push_back(j);
            bw.write(codec.rank(kept), codec.bits_per_block());
            for (std::uint32_t idx : kept) {
                const double v = packed_values != nullptr
                                     ? (*packed_values)[vi++]
                                     : dense_values[i * mask.cols + base + idx];
                append_value(values_out, v, dtype);
            }
        }
        bw.align_to_byte();
    }
}

}  // namespace detail

inline std::size_t dtype_size(DType d) { return d == DType::Float64 ? 8 : 4; }

// Exact per-stream rank byte count: rows * ceil(blocks_per_row * bits / 8).
inline std::uint64_t rank_stream_bytes(std::size_t rows, std::size_t cols, PatternShape s,
                                       std::uint32_t bits_per_block) {
    const std::uint64_t blocks_per_row = cols / s.m_block;
    return static_cast<std::uint64_t>(rows) * ((blocks_per_row * bits_per_block + 7) / 8);
}

inline SparseEncodedTensor encode(const PrunedLayer& layer, DType dtype = DType::Float64) {
    validate(layer.residual);
    validate(layer.residual_mask);
    if (layer.residual_mask.rows != layer.residual.rows ||
        layer.residual_mask.cols != layer.residual.cols)
        throw std::invalid_argument("encode: residual mask shape mismatch");

    SparseEncodedTensor t;
    t.rows = static_cast<std::uint32_t>(layer.residual.rows);
    t.cols = static_cast<std::uint32_t>(layer.residual.cols);
    t.residual_shape = layer.residual_mask.shape;
    t.dtype = dtype;
    t.correction_factor = layer.correction_factor;

    const PatternCodec codec(t.residual_shape);
    detail::pack_streams(codec, layer.residual_mask, layer.residual.data.data(), nullptr, dtype,
                         t.residual_values, t.residual_ranks);

    if (!layer.salient.empty()) {
        validate(layer.salient.mask);
        if (layer.salient.mask.rows != layer.residual.rows ||
            layer.salient.mask.cols != layer.residual.cols)
            throw std::invalid_argument("encode: salient mask shape mismatch");
        t.salient_k = layer.salient.shape.n_keep;
        const WidePatternCodec wide(layer.salient.shape);
        detail::pack_streams(wide, layer.salient.mask, nullptr, &layer.salient.values, dtype,
                             t.salient_values, t.salient_ranks);
    }
    return t;
}

inline std::pair<WeightMatrix, SalientStore> decode(const SparseEncodedTensor& t) {
    validate(t.residual_shape);
    if (t.cols % t.residual_shape.m_block != 0)
        throw CodecError(CodecError::Kind::HeaderMismatch,
                         "decode: cols not divisible by residual block");
    if (t.salient_k > 0 && t.cols % kSalientBlock != 0)
        throw CodecError(CodecError::Kind::HeaderMismatch,
                         "decode: cols not divisible by salient block");

    const std::size_t rows = t.rows, cols = t.cols;
    const std::size_t vsize = dtype_size(t.dtype);
    const PatternCodec codec(t.residual_shape);

    const std::uint64_t want_res_values =
        static_cast<std::uint64_t>(rows) * (cols / t.residual_shape.m_block) *
        t.residual_shape.n_keep * vsize;
    if (t.residual_values.size() != want_res_values)
        throw CodecError(CodecError::Kind::TruncatedStream, "decode: residual value stream size");
    if (t.residual_ranks.size() !=
        rank_stream_bytes(rows, cols, t.residual_shape, codec.bits_per_block()))
        throw CodecError(CodecError::Kind::TruncatedStream, "decode: residual rank stream size");

    WeightMatrix residual(rows, cols);
    {
        detail::BitReader br(t.residual_ranks);
        std::vector<std::uint32_t> kept(t.residual_shape.n_keep);
        const std::uint8_t* vp = t.residual_values.data();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t base = 0; base < cols; base += t.residual_shape.m_block) {
                const u128 r = br.read(codec.bits_per_block());
                if (r >= codec.config_count())
                    throw CodecError(CodecError::Kind::InvalidRank,
                                     "decode: residual rank out of range");
                codec.unrank_into(static_cast<std::uint64_t>(r), kept.data());
                for (std::uint32_t idx : kept) {
                    residual.at(i, base + idx) = detail::read_value(vp, t.dtype);
                    vp += vsize;
                }
            }
            br.align_to_byte();
        }
    }

    SalientStore store;
    if (t.salient_k > 0) {
        store.shape = PatternShape{t.salient_k, kSalientBlock};
        const WidePatternCodec wide(store.shape);
        const std::uint64_t want_sal_values =
            static_cast<std::uint64_t>(rows) * (cols / kSalientBlock) * t.salient_k * vsize;
        if (t.salient_values.size() != want_sal_values)
            throw CodecError(CodecError::Kind::TruncatedStream, "decode: salient value stream size");
        if (t.salient_ranks.size() !=
            rank_stream_bytes(rows, cols, store.shape, wide.bits_per_block()))
            throw CodecError(CodecError::Kind::TruncatedStream, "decode: salient rank stream size");

        store.mask = NMMask{store.shape, rows, cols, std::vector<std::uint8_t>(rows * cols, 0)};
        store.values.reserve(rows * (cols / kSalientBlock) * t.salient_k);
        detail::BitReader br(t.salient_ranks);
        std::vector<std::uint32_t> kept(t.salient_k);
        const std::uint8_t* vp = t.salient_values.data();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t base = 0; base < cols; base += kSalientBlock) {
                const u128 r = br.read(wide.bits_per_block());
                if (r >= wide.config_count())
                    throw CodecError(CodecError::Kind::InvalidRank,
                                     "decode: salient rank out of range");
                wide.unrank_into(r, kept.data());
                for (std::uint32_t idx : kept) {
                    store.mask.keep[i * cols + base + idx] = 1;
                    store.values.push_back(detail::read_value(vp, t.dtype));
                    vp += vsize;
                }
            }
            br.align_to_byte();
        }
    } else {
        if (!t.salient_values.empty() || !t.salient_ranks.empty())
            throw CodecError(CodecError::Kind::HeaderMismatch,
                             "decode: salient streams present but salient_k = 0");
    }
    return {std::move(residual), std::move(store)};
}

// PrunedLayer view of a decoded tensor (mask rebuilt from the residual ranks).
inline PrunedLayer decode_layer(const SparseEncodedTensor& t) {
    auto [residual, store] = decode(t);
    PrunedLayer layer;
    layer.residual_mask = NMMask{t.residual_shape, residual.rows, residual.cols,
                                 std::vector<std::uint8_t>(residual.size(), 0)};
    // Recover the mask by a second rank pass; cheaper than re-deriving from values
    // (zero-valued kept weights are legal).
    const PatternCodec codec(t.residual_shape);
    detail::BitReader br(t.residual_ranks);
    std::vector<std::uint32_t> kept(t.residual_shape.n_keep);
    for (std::size_t i = 0; i < layer.residual_mask.rows; ++i) {
        for (std::size_t base = 0; base < layer.residual_mask.cols;
             base += t.residual_shape.m_block) {
            codec.unrank_into(static_cast<std::uint64_t>(br.read(codec.bits_per_block())),
                              kept.data());
            for (std::uint32_t idx : kept)
                layer.residual_mask.keep[i * layer.residual_mask.cols + base + idx] = 1;
        }
        br.align_to_byte();
    }
    layer.residual = std::move(residual);
    layer.salient = std::move(store);
    layer.correction_factor = t.correction_factor;
    return layer;
}

// Dense W_hat = residual + salient, for evaluation.
inline WeightMatrix densify(const SparseEncodedTensor& t) {
    auto [residual, store] = decode(t);
    if (!store.empty()) {
        std::size_t vi = 0;
        for (std::size_t f = 0; f < residual.size(); ++f)
            if (store.mask.keep[f]) residual.data[f] += store.values[vi++];
    }
    return residual;
}

// y = residual * x + salient * x, straight off the packed streams (no
// densification). Per-row accumulation order is fixed: blocks left to right,
// kept indices ascending.
inline std::vector<double> spmv(const SparseEncodedTensor& t, std::span<const double> x,
                                bool include_salient = true) {
    if (x.size() != t.cols) throw std::invalid_argument("spmv: x length != cols");
    validate(t.residual_shape);
    const std::size_t vsize = dtype_size(t.dtype);
    std::vector<double> y(t.rows, 0.0);

    {
        const PatternCodec codec(t.residual_shape);
        detail::BitReader br(t.residual_ranks);
        std::vector<std::uint32_t> kept(t.residual_shape.n_keep);
        const std::uint8_t* vp = t.residual_values.data();
        const std::uint8_t* vend = vp + t.residual_values.size();
        for (std::size_t i = 0; i < t.rows; ++i) {
            double acc = 0.0;
            for (std::size_t base = 0; base < t.cols; base += t.residual_shape.m_block) {
                const u128 r = br.read(codec.bits_per_block());
                if (r >= codec.config_count())
                    throw CodecError(CodecError::Kind::InvalidRank, "spmv: residual rank");
                codec.unrank_into(static_cast<std::uint64_t>(r), kept.data());
                for (std::uint32_t idx : kept) {
                    if (vp + vsize > vend)
                        throw CodecError(CodecError::Kind::TruncatedStream, "spmv: value stream");
                    acc += detail::read_value(vp, t.dtype) * x[base + idx];
                    vp += vsize;
                }
            }
            br.align_to_byte();
            y[i] = acc;
        }
    }

    if (include_salient && t.salient_k > 0) {
        const WidePatternCodec wide(PatternShape{t.salient_k, kSalientBlock});
        detail::BitReader br(t.salient_ranks);
        std::vector<std::uint32_t> kept(t.salient_k);
        const std::uint8_t* vp = t.salient_values.data();
        const std::uint8_t* vend = vp + t.salient_values.size();
        for (std::size_t i = 0; i < t.rows; ++i) {
            double acc = 0.0;
            for (std::size_t base = 0; base < t.cols; base += kSalientBlock) {
                const u128 r = br.read(wide.bits_per_block());
                if (r >= wide.config_count())
                    throw CodecError(CodecError::Kind::InvalidRank, "spmv: salient rank");
                wide.unrank_into(r, kept.data());
                for (std::uint32_t idx : kept) {
                    if (vp + vsize > vend)
                        throw CodecError(CodecError::Kind::TruncatedStream, "spmv: value stream");
                    acc += detail::read_value(vp, t.dtype) * x[base + idx];
                    vp += vsize;
                }
            }
            br.align_to_byte();
            y[i] += acc;
        }
    }
    return y;
}

namespace detail {

inline void put_u16_le(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline std::uint16_t get_u16_le(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(p[b]) << (8 * b);
    return v;
}

}  // namespace detail

constexpr std::uint16_t kNmsVersion = 1;
constexpr std::size_t kNmsHeaderBytes = 29;

inline std::vector<std::uint8_t> serialize_nms(const SparseEncodedTensor& t) {
    std::vector<std::uint8_t> out;
    out.reserve(kNmsHeaderBytes + 32 + t.residual_values.size() + t.residual_ranks.size() +
                t.salient_values.size() + t.salient_ranks.size());
    out.push_back('N');
    out.push_back('M');
    out.push_back('S');
    out.push_back('1');
    detail::put_u16_le(out, kNmsVersion);
    detail::put_u32_le(out, t.rows);
    detail::put_u32_le(out, t.cols);
    detail::put_u16_le(out, static_cast<std::uint16_t>(t.residual_shape.n_keep));
    detail::put_u16_le(out, static_cast<std::uint16_t>(t.residual_shape.m_block));
    detail::put_u16_le(out, static_cast<std::uint16_t>(t.salient_k));
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    std::uint64_t cf_bits;
    std::memcpy(&cf_bits, &t.correction_factor, 8);
    detail::put_u64_le(out, cf_bits);
    for (const auto* stream :
         {&t.residual_values, &t.residual_ranks, &t.salient_values, &t.salient_ranks}) {
        detail::put_u64_le(out, stream->size());
        out.insert(out.end(), stream->begin(), stream->end());
    }
    return out;
}

inline SparseEncodedTensor parse_nms(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kNmsHeaderBytes || bytes[0] != 'N' || bytes[1] != 'M' || bytes[2] != 'S' ||
        bytes[3] != '1')
        throw CodecError(CodecError::Kind::HeaderMismatch, "not an NMS1 file");
    if (detail::get_u16_le(bytes.data() + 4) != kNmsVersion)
        throw CodecError(CodecError::Kind::HeaderMismatch, "unsupported NMS1 version");

    SparseEncodedTensor t;
    t.rows = detail::get_u32_le(bytes.data() + 6);
    t.cols = detail::get_u32_le(bytes.data() + 10);
    t.residual_shape.n_keep = detail::get_u16_le(bytes.data() + 14);
    t.residual_shape.m_block = detail::get_u16_le(bytes.data() + 16);
    t.salient_k = detail::get_u16_le(bytes.data() + 18);
    const std::uint8_t tag = bytes[20];
    if (tag > 1) throw CodecError(CodecError::Kind::HeaderMismatch, "unknown dtype tag");
    t.dtype = static_cast<DType>(tag);
    std::uint64_t cf_bits = detail::get_u64_le(bytes.data() + 21);
    std::memcpy(&t.correction_factor, &cf_bits, 8);

    std::size_t off = kNmsHeaderBytes;
    for (auto* stream :
         {&t.residual_values, &t.residual_ranks, &t.salient_values, &t.salient_ranks}) {
        if (off + 8 > bytes.size())
            throw CodecError(CodecError::Kind::TruncatedStream, "NMS1: missing stream length");
        const std::uint64_t len = detail::get_u64_le(bytes.data() + off);
        off += 8;
        if (off + len > bytes.size())
            throw CodecError(CodecError::Kind::TruncatedStream, "NMS1: stream truncated");
        stream->assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                       bytes.begin() + static_cast<std::ptrdiff_t>(off + len));
        off += len;
    }
    if (off != bytes.size())
        throw CodecError(CodecError::Kind::HeaderMismatch, "NMS1: trailing bytes");
    return t;
}

inline void save_nms(const std::string& path, const SparseEncodedTensor& t) {
    detail::write_file(path, serialize_nms(t));
}

inline SparseEncodedTensor load_nms(const std::string& path) {
    return parse_nms(detail::read_file(path));
}

}  // namespace nmsparse
