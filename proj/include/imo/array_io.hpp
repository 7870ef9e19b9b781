#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "imo/tensor.hpp"

namespace imo {

static_assert(std::endian::native == std::endian::little, "IMOA payloads are little-endian");

template <typename T>
constexpr std::uint8_t dtype_code();
template <>
constexpr std::uint8_t dtype_code<float>() { return 0; }
template <>
constexpr std::uint8_t dtype_code<double>() { return 1; }

namespace detail {

inline void write_bytes(std::ofstream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::ifstream& is, void* p, std::size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw FormatError("truncated array file: " + path);
}

}  // namespace detail

// Portable array file: magic "IMOA", version byte, dtype byte (0=f32, 1=f64),
// u32 ndim, u64 dims[], little-endian payload.
template <typename T>
void write_array(const std::string& path, const Tensor<T>& t) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw FileError("cannot write " + tmp);
        detail::write_bytes(os, "IMOA", 4);
        const std::uint8_t version = 1, dtype = dtype_code<T>();
        detail::write_bytes(os, &version, 1);
        detail::write_bytes(os, &dtype, 1);
        const std::uint32_t ndim = static_cast<std::uint32_t>(t.ndim());
        detail::write_bytes(os, &ndim, 4);
        for (int i = 0; i < t.ndim(); ++i) {
            const std::uint64_t d = static_cast<std::uint64_t>(t.dim(i));
            detail::write_bytes(os, &d, 8);
        }
        detail::write_bytes(os, t.values().data(), t.size() * sizeof(T));
        if (!os) throw FileError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
Tensor<T> read_array(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileError("cannot open " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4, path);
    if (std::memcmp(magic, "IMOA", 4) != 0) throw FormatError("IMOA magic mismatch: " + path);
    std::uint8_t version = 0, dtype = 0;
    detail::read_bytes(is, &version, 1, path);
    if (version != 1) throw FormatError("unsupported IMOA version in " + path);
    detail::read_bytes(is, &dtype, 1, path);
    if (dtype != dtype_code<T>())
        throw FormatError("IMOA dtype " + std::to_string(dtype) + " does not match requested type: " + path);
    std::uint32_t ndim = 0;
    detail::read_bytes(is, &ndim, 4, path);
    if (ndim == 0 || ndim > 8) throw FormatError("bad IMOA rank in " + path);
    Shape shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) {
        std::uint64_t d = 0;
        detail::read_bytes(is, &d, 8, path);
        if (d == 0 || d > (1u << 24)) throw FormatError("bad IMOA extent in " + path);
        shape[i] = static_cast<int>(d);
    }
    std::vector<T> data(numel(shape));
    detail::read_bytes(is, data.data(), data.size() * sizeof(T), path);
    return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace imo
