#pragma once

// Binary parameter checkpoints:
//   "CSPC" | u32 version | u32 array count |
//   per array: u32 rank, u64 dims[rank], f64 values[prod(dims)]
// All integers and doubles little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "conspec/autodiff.hpp"

namespace conspec::checkpoint {

inline constexpr char kMagic[4] = {'C', 'S', 'P', 'C'};
inline constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Array {
    ad::Shape shape;
    std::vector<double> values;
};

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace detail

inline void write(std::ostream& os, const std::vector<Array>& arrays) {
    os.write(kMagic, 4);
    detail::put<std::uint32_t>(os, kVersion);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (ad::numel(a.shape) != a.values.size()) throw ad::ShapeError("checkpoint: array size does not match shape");
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) detail::put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(a.values.data()),
                 static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    }
}

inline std::vector<Array> read(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    const auto version = detail::take<std::uint32_t>(is);
    if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    const auto n = detail::take<std::uint32_t>(is);
    std::vector<Array> out(n);
    for (auto& a : out) {
        const auto rank = detail::take<std::uint32_t>(is);
        if (rank > 8) throw std::runtime_error("checkpoint: implausible rank " + std::to_string(rank));
        for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(detail::take<std::uint64_t>(is));
        a.values.resize(ad::numel(a.shape));
        if (!is.read(reinterpret_cast<char*>(a.values.data()),
                     static_cast<std::streamsize>(a.values.size() * sizeof(double))))
            throw std::runtime_error("checkpoint: truncated payload");
    }
    return out;
}

inline std::vector<Array> snapshot(const std::vector<ad::Var>& params) {
    std::vector<Array> out;
    for (const auto& p : params) out.push_back({p->shape, p->value});
    return out;
}

// Copies arrays into parameters, which must match in count and shape.
inline void restore(const std::vector<Array>& arrays, const std::vector<ad::Var>& params) {
    if (arrays.size() != params.size())
        throw ad::ShapeError("checkpoint: " + std::to_string(arrays.size()) + " arrays for " +
                             std::to_string(params.size()) + " parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (arrays[i].shape != params[i]->shape)
            throw ad::ShapeError("checkpoint: array " + std::to_string(i) + " has shape " +
                                 ad::shape_str(arrays[i].shape) + ", parameter expects " +
                                 ad::shape_str(params[i]->shape));
        params[i]->value = arrays[i].values;
    }
}

inline void save_file(const std::string& path, const std::vector<ad::Var>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint " + path);
    write(os, snapshot(params));
}

inline void load_file(const std::string& path, const std::vector<ad::Var>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint " + path);
    restore(read(is), params);
}

}  // namespace conspec::checkpoint
