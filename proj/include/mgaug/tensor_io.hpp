// MGT1 tensor container:
//   4 bytes  magic "MGT1"
//   u8       dtype (0 = f32, 1 = f64, 2 = u8)
//   u8       rank (at most 4)
//   u32 LE   extent, repeated rank times
//   payload  packed little-endian values, row-major
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgaug/field.hpp"

namespace mgaug {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

inline std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::u8: return 1;
    }
    throw FormatError("unknown dtype");
}

struct Tensor {
    DType dtype = DType::f64;
    std::vector<std::uint32_t> shape;
    std::vector<double> data;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        return n;
    }
};

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<unsigned char> encode_mgt(const Tensor& t) {
    if (t.shape.size() > 4) throw FormatError("MGT1 rank above 4");
    if (t.data.size() != t.count()) throw FormatError("MGT1 data size does not match shape");
    std::vector<unsigned char> out{'M', 'G', 'T', '1'};
    out.push_back(static_cast<unsigned char>(t.dtype));
    out.push_back(static_cast<unsigned char>(t.shape.size()));
    for (auto e : t.shape) detail::put_le<std::uint32_t>(out, e);
    out.reserve(out.size() + t.data.size() * dtype_size(t.dtype));
    for (double v : t.data) {
        switch (t.dtype) {
            case DType::f32: detail::put_le<float>(out, static_cast<float>(v)); break;
            case DType::f64: detail::put_le<double>(out, v); break;
            case DType::u8: {
                if (!(v >= 0.0 && v <= 255.0)) throw FormatError("u8 tensor value out of range");
                out.push_back(static_cast<unsigned char>(std::lround(v)));
                break;
            }
        }
    }
    return out;
}

inline Tensor decode_mgt(std::span<const unsigned char> bytes) {
    if (bytes.size() < 6) throw FormatError("MGT1: header truncated at byte " + std::to_string(bytes.size()));
    if (std::memcmp(bytes.data(), "MGT1", 4) != 0) throw FormatError("MGT1: bad magic at byte 0");
    Tensor t;
    const auto code = bytes[4];
    if (code > 2) throw FormatError("MGT1: unknown dtype code " + std::to_string(code) + " at byte 4");
    t.dtype = static_cast<DType>(code);
    const std::size_t rank = bytes[5];
    if (rank > 4) throw FormatError("MGT1: rank " + std::to_string(rank) + " above 4 at byte 5");
    const std::size_t header = 6 + 4 * rank;
    if (bytes.size() < header) throw FormatError("MGT1: extents truncated at byte " + std::to_string(bytes.size()));
    std::size_t count = 1;
    for (std::size_t r = 0; r < rank; ++r) {
        const auto e = detail::get_le<std::uint32_t>(bytes.data() + 6 + 4 * r);
        if (e != 0 && count > std::numeric_limits<std::size_t>::max() / 8 / e) {
            throw FormatError("MGT1: extent overflow at byte " + std::to_string(6 + 4 * r));
        }
        count *= e;
        t.shape.push_back(e);
    }
    const std::size_t width = dtype_size(t.dtype);
    const std::size_t expected = header + count * width;
    if (bytes.size() != expected) {
        throw FormatError("MGT1: payload size mismatch, expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    t.data.resize(count);
    const unsigned char* p = bytes.data() + header;
    for (std::size_t i = 0; i < count; ++i, p += width) {
        switch (t.dtype) {
            case DType::f32: t.data[i] = detail::get_le<float>(p); break;
            case DType::f64: t.data[i] = detail::get_le<double>(p); break;
            case DType::u8: t.data[i] = *p; break;
        }
    }
    return t;
}

inline void save_mgt(const std::filesystem::path& path, const Tensor& t) {
    const auto bytes = encode_mgt(t);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Tensor load_mgt(const std::filesystem::path& path) {
    const auto bytes = detail::read_all(path);
    try {
        return decode_mgt(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline Tensor to_tensor(const ScalarField& f, DType dtype = DType::f32) {
    Tensor t{dtype, {}, {f.values().begin(), f.values().end()}};
    for (int d : f.grid().dims()) t.shape.push_back(static_cast<std::uint32_t>(d));
    return t;
}

/// Vector fields are stored with the component axis first: [axes, dims...].
inline Tensor to_tensor(const VectorField& v, DType dtype = DType::f32) {
    Tensor t{dtype, {static_cast<std::uint32_t>(v.axes())}, {v.values().begin(), v.values().end()}};
    for (int d : v.grid().dims()) t.shape.push_back(static_cast<std::uint32_t>(d));
    return t;
}

inline ScalarField to_scalar_field(const Tensor& t) {
    if (t.shape.size() != 2 && t.shape.size() != 3) throw FormatError("scalar field tensor must have rank 2 or 3");
    return ScalarField(Grid(std::vector<int>(t.shape.begin(), t.shape.end())), t.data);
}

inline VectorField to_vector_field(const Tensor& t) {
    if (t.shape.size() != 3 && t.shape.size() != 4) throw FormatError("vector field tensor must have rank 3 or 4");
    if (t.shape[0] + 1 != t.shape.size()) throw FormatError("vector field component count does not match rank");
    return VectorField(Grid(std::vector<int>(t.shape.begin() + 1, t.shape.end())), t.data);
}

}  // namespace mgaug
