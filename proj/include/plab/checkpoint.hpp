// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plab/params.hpp"

namespace plab::ckpt {

constexpr char kMagic[4] = {'P', 'L', 'A', 'B'};
constexpr std::uint8_t kFormatVersion = 1;

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    PLAB_CHECK(in.gcount() == 4, "checkpoint truncated while reading ", what);
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

template <class T>
void write_scalar(std::ostream& out, T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    if constexpr (sizeof(T) == 4) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32(out, bits);
    } else {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffULL));
        write_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
}

template <class T>
T read_scalar(std::istream& in) {
    T v;
    if constexpr (sizeof(T) == 4) {
        const std::uint32_t bits = read_u32(in, "tensor data");
        std::memcpy(&v, &bits, 4);
    } else {
        const std::uint64_t lo = read_u32(in, "tensor data");
        const std::uint64_t hi = read_u32(in, "tensor data");
        const std::uint64_t bits = lo | (hi << 32);
        std::memcpy(&v, &bits, 8);
    }
    return v;
}

}  // namespace detail

// Binary layout: magic "PLAB", format version byte, scalar width byte (4 or
// 8), record count, then length-prefixed (name, shape, little-endian raw
// values) records in parameter order. No timestamps; identical parameters
// give identical bytes.
template <class T>
void save_params(std::ostream& out, const ParamSet<T>& params) {
    out.write(kMagic, 4);
    out.put(static_cast<char>(kFormatVersion));
    out.put(static_cast<char>(sizeof(T)));
    detail::write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
        for (const int extent : tensor.shape)
            detail::write_u32(out, static_cast<std::uint32_t>(extent));
        for (const T v : tensor.data) detail::write_scalar(out, v);
    }
}

template <class T>
void save_params(const std::string& path, const ParamSet<T>& params) {
    std::ofstream out(path, std::ios::binary);
    PLAB_CHECK(out.good(), "cannot open '", path, "' for writing");
    save_params(out, params);
    PLAB_CHECK(out.good(), "failed writing checkpoint to '", path, "'");
}

template <class T>
ParamSet<T> load_params(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    PLAB_CHECK(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0,
               "not a checkpoint: wrong magic bytes");
    const int version = in.get();
    PLAB_CHECK(version == kFormatVersion, "checkpoint format version ", version,
               " does not match supported version ", static_cast<int>(kFormatVersion));
    const int width = in.get();
    PLAB_CHECK(width == static_cast<int>(sizeof(T)), "checkpoint stores ", width * 8,
               "-bit values but ", sizeof(T) * 8, "-bit parameters were requested");
    const std::uint32_t count = detail::read_u32(in, "record count");

    ParamSet<T> params;
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint32_t name_len = detail::read_u32(in, "name length");
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        PLAB_CHECK(in.gcount() == static_cast<std::streamsize>(name_len),
                   "checkpoint truncated while reading a record name");
        const std::uint32_t rank = detail::read_u32(in, "shape rank");
        PLAB_CHECK(rank <= 4, "implausible tensor rank ", rank, " in checkpoint");
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int>(detail::read_u32(in, "shape extent")));
        Tensor<T> tensor(shape);
        for (auto& v : tensor.data) v = detail::read_scalar<T>(in);
        params.add(std::move(name), std::move(tensor));
    }
    return params;
}

template <class T>
ParamSet<T> load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    PLAB_CHECK(in.good(), "cannot open checkpoint '", path, "'");
    return load_params<T>(in);
}

// FNV-1a over a canonical string; used for the model-config digest that
// guards checkpoint/model compatibility.
inline std::uint64_t digest_string(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : text) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string digest_hex(std::uint64_t digest) {
    char buffer[19];
    std::snprintf(buffer, sizeof(buffer), "0x%016llx", static_cast<unsigned long long>(digest));
    return buffer;
}

struct Sidecar {
    int format_version = kFormatVersion;
    std::string precision = "f32";
    std::string model_digest;
    std::uint64_t root_seed = 0;
    std::int64_t created_unix = 0;  // timestamps live here, never in the binary
};

inline void write_sidecar(const std::string& path, const Sidecar& s) {
    nlohmann::ordered_json j;
    j["format_version"] = s.format_version;
    j["precision"] = s.precision;
    j["model_digest"] = s.model_digest;
    j["rng"] = {{"root_seed", s.root_seed}};
    j["created_unix"] = s.created_unix;
    std::ofstream out(path, std::ios::binary);
    PLAB_CHECK(out.good(), "cannot open '", path, "' for writing");
    out << j.dump(2) << "\n";
}

inline Sidecar read_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    PLAB_CHECK(in.good(), "cannot open checkpoint sidecar '", path, "'");
    nlohmann::json j;
    in >> j;
    Sidecar s;
    s.format_version = j.value("format_version", 0);
    s.precision = j.value("precision", "f32");
    s.model_digest = j.value("model_digest", "");
    if (j.contains("rng")) s.root_seed = j["rng"].value("root_seed", 0ULL);
    s.created_unix = j.value("created_unix", static_cast<std::int64_t>(0));
    return s;
}

inline void check_model_digest(const Sidecar& sidecar, const std::string& expected) {
    PLAB_CHECK(sidecar.model_digest == expected, "checkpoint was written for model config ",
               sidecar.model_digest, " but the current model config is ", expected);
}

}  // namespace plab::ckpt
