#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmsparse/tensor.hpp"

namespace nmsparse {

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1 };

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// "DWT1" dense weight tensor container:
//   byte 0..3   magic 'D' 'W' 'T' '1'
//   byte 4..7   u32 rows (little-endian)
//   byte 8..11  u32 cols (little-endian)
//   byte 12     u8 dtype tag: 0 = float32, 1 = float64
//   byte 13..   rows*cols row-major values, little-endian IEEE-754
// A CalibrationSet uses the same container with rows = samples.

namespace detail {

inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline std::uint32_t get_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError("read failed: " + path);
    return bytes;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_dwt(const WeightMatrix& w, DType dtype) {
    validate(w);
    std::vector<std::uint8_t> out;
    out.reserve(13 + w.size() * (dtype == DType::Float64 ? 8 : 4));
    out.push_back('D');
    out.push_back('W');
    out.push_back('T');
    out.push_back('1');
    detail::put_u32_le(out, static_cast<std::uint32_t>(w.rows));
    detail::put_u32_le(out, static_cast<std::uint32_t>(w.cols));
    out.push_back(static_cast<std::uint8_t>(dtype));
    if (dtype == DType::Float64) {
        for (double v : w.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
        }
    } else {
        for (double v : w.data) {
            const float fv = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &fv, 4);
            for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
        }
    }
    return out;
}

inline WeightMatrix parse_dwt(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 13 || bytes[0] != 'D' || bytes[1] != 'W' || bytes[2] != 'T' ||
        bytes[3] != '1')
        throw IoError("not a DWT1 file");
    const std::uint32_t rows = detail::get_u32_le(bytes.data() + 4);
    const std::uint32_t cols = detail::get_u32_le(bytes.data() + 8);
    const std::uint8_t tag = bytes[12];
    if (tag > 1) throw IoError("DWT1: unknown dtype tag");
    const std::size_t vsize = tag == 1 ? 8 : 4;
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if (bytes.size() != 13 + count * vsize) throw IoError("DWT1: truncated or oversized payload");

    WeightMatrix w(rows, cols);
    const std::uint8_t* p = bytes.data() + 13;
    for (std::size_t i = 0; i < count; ++i, p += vsize) {
        if (tag == 1) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
            std::memcpy(&w.data[i], &bits, 8);
        } else {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
            float fv;
            std::memcpy(&fv, &bits, 4);
            w.data[i] = static_cast<double>(fv);
        }
    }
    validate(w);
    return w;
}

inline void save_dwt(const std::string& path, const WeightMatrix& w,
                     DType dtype = DType::Float64) {
    detail::write_file(path, serialize_dwt(w, dtype));
}

inline WeightMatrix load_dwt(const std::string& path) {
    return parse_dwt(detail::read_file(path));
}

inline CalibrationSet load_dwt_calibration(const std::string& path) {
    WeightMatrix m = load_dwt(path);
    return CalibrationSet{m.rows, m.cols, std::move(m.data)};
}

}  // namespace nmsparse
