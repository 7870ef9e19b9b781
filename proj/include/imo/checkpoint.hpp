#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include "imo/array_io.hpp"
#include "imo/nn.hpp"

namespace imo {

// Checkpoint file: magic "IMOC", version byte, u64 entry count, then per
// entry (u32 name length, name bytes, dtype byte, u32 ndim, u64 dims[],
// little-endian payload, u32 crc32 of the payload).
template <typename T>
void save_checkpoint(const std::string& path, const ParamRegistry<T>& reg) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw FileError("cannot write " + tmp);
        detail::write_bytes(os, "IMOC", 4);
        const std::uint8_t version = 1;
        detail::write_bytes(os, &version, 1);
        const std::uint64_t count = reg.entries().size();
        detail::write_bytes(os, &count, 8);
        for (const auto& e : reg.entries()) {
            const std::uint32_t name_len = static_cast<std::uint32_t>(e.name.size());
            detail::write_bytes(os, &name_len, 4);
            detail::write_bytes(os, e.name.data(), e.name.size());
            const std::uint8_t dtype = dtype_code<T>();
            detail::write_bytes(os, &dtype, 1);
            const std::uint32_t ndim = static_cast<std::uint32_t>(e.tensor->ndim());
            detail::write_bytes(os, &ndim, 4);
            for (int i = 0; i < e.tensor->ndim(); ++i) {
                const std::uint64_t d = static_cast<std::uint64_t>(e.tensor->dim(i));
                detail::write_bytes(os, &d, 8);
            }
            const std::size_t nbytes = e.tensor->size() * sizeof(T);
            detail::write_bytes(os, e.tensor->values().data(), nbytes);
            const std::uint32_t crc = crc32(e.tensor->values().data(), nbytes);
            detail::write_bytes(os, &crc, 4);
        }
        if (!os) throw FileError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

// Strict by-name load into an existing registry; shape, dtype, and checksum
// mismatches are rejected with the offending tensor named.
template <typename T>
void load_checkpoint(const std::string& path, ParamRegistry<T>& reg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FileError("cannot open checkpoint " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4, path);
    if (std::memcmp(magic, "IMOC", 4) != 0) throw FormatError("IMOC magic mismatch: " + path);
    std::uint8_t version = 0;
    detail::read_bytes(is, &version, 1, path);
    if (version != 1) throw FormatError("unsupported checkpoint version in " + path);
    std::uint64_t count = 0;
    detail::read_bytes(is, &count, 8, path);
    if (count != reg.entries().size())
        throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(reg.entries().size()));
    for (std::uint64_t k = 0; k < count; ++k) {
        std::uint32_t name_len = 0;
        detail::read_bytes(is, &name_len, 4, path);
        if (name_len > 4096) throw FormatError("bad name length in " + path);
        std::string name(name_len, '\0');
        detail::read_bytes(is, name.data(), name_len, path);
        std::uint8_t dtype = 0;
        detail::read_bytes(is, &dtype, 1, path);
        if (dtype != dtype_code<T>())
            throw FormatError("checkpoint dtype mismatch for tensor '" + name + "'");
        std::uint32_t ndim = 0;
        detail::read_bytes(is, &ndim, 4, path);
        if (ndim == 0 || ndim > 8) throw FormatError("bad rank for tensor '" + name + "'");
        Shape shape(ndim);
        for (std::uint32_t i = 0; i < ndim; ++i) {
            std::uint64_t d = 0;
            detail::read_bytes(is, &d, 8, path);
            if (d == 0 || d > (1u << 24)) throw FormatError("bad extent for tensor '" + name + "'");
            shape[i] = static_cast<int>(d);
        }
        Tensor<T>* target = nullptr;
        for (const auto& e : reg.entries())
            if (e.name == name) {
                target = e.tensor;
                break;
            }
        if (!target) throw FormatError("checkpoint tensor '" + name + "' unknown to this model");
        if (target->shape() != shape)
            throw FormatError("shape mismatch for tensor '" + name + "': checkpoint " +
                              shape_str(shape) + ", model " + shape_str(target->shape()));
        std::vector<T> data(numel(shape));
        detail::read_bytes(is, data.data(), data.size() * sizeof(T), path);
        std::uint32_t crc = 0;
        detail::read_bytes(is, &crc, 4, path);
        if (crc != crc32(data.data(), data.size() * sizeof(T)))
            throw FormatError("checksum mismatch in tensor '" + name + "'");
        std::copy(data.begin(), data.end(), target->values().begin());
    }
}

}  // namespace imo
