#pragma once

#include <bit>
#include <cstring>
#include <fstream>

#include "metor/nn.hpp"

// Versioned binary container of named tensors, also used for frame blobs.
// Layout (little-endian):
//   magic "MTORCKPT" | u32 version | u64 entry count |
//   per entry: u32 name_len | name | u8 dtype (0=f32,1=f64) |
//              u32 rank | i64 dims[rank] | payload

namespace metor {

static_assert(std::endian::native == std::endian::little,
              "tensor container assumes a little-endian host");

inline constexpr char kContainerMagic[8] = {'M', 'T', 'O', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct TensorRecord {
    std::string name;
    Shape shape;
    int dtype = 0;  // 0 = f32, 1 = f64
    std::vector<float> f32;
    std::vector<double> f64;

    long numel() const { return shape_numel(shape); }
};

namespace detail {

template <typename V>
void write_pod(std::ofstream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const char* what) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw DataError(std::string("tensor container: truncated while reading ") + what);
    return v;
}

}  // namespace detail

inline void write_tensor_container(const std::string& path,
                                   const std::vector<TensorRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(kContainerMagic, sizeof(kContainerMagic));
    detail::write_pod(out, kContainerVersion);
    detail::write_pod(out, static_cast<std::uint64_t>(records.size()));
    for (const auto& r : records) {
        detail::write_pod(out, static_cast<std::uint32_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::write_pod(out, static_cast<std::uint8_t>(r.dtype));
        detail::write_pod(out, static_cast<std::uint32_t>(r.shape.size()));
        for (long d : r.shape) detail::write_pod(out, static_cast<std::int64_t>(d));
        if (r.dtype == 0) {
            if (static_cast<long>(r.f32.size()) != r.numel())
                throw std::logic_error("tensor record size mismatch: " + r.name);
            out.write(reinterpret_cast<const char*>(r.f32.data()),
                      static_cast<std::streamsize>(r.f32.size() * sizeof(float)));
        } else {
            if (static_cast<long>(r.f64.size()) != r.numel())
                throw std::logic_error("tensor record size mismatch: " + r.name);
            out.write(reinterpret_cast<const char*>(r.f64.data()),
                      static_cast<std::streamsize>(r.f64.size() * sizeof(double)));
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<TensorRecord> read_tensor_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0)
        throw DataError("not a tensor container: " + path);
    const auto version = detail::read_pod<std::uint32_t>(in, "version");
    if (version != kContainerVersion)
        throw DataError("unknown container version " + std::to_string(version) + " in " + path);
    const auto count = detail::read_pod<std::uint64_t>(in, "entry count");
    std::vector<TensorRecord> records;
    records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        TensorRecord r;
        const auto name_len = detail::read_pod<std::uint32_t>(in, "name length");
        r.name.resize(name_len);
        in.read(r.name.data(), name_len);
        if (!in) throw DataError("truncated name in " + path);
        r.dtype = detail::read_pod<std::uint8_t>(in, "dtype");
        if (r.dtype != 0 && r.dtype != 1)
            throw DataError("unknown dtype tag for entry " + r.name + " in " + path);
        const auto rank = detail::read_pod<std::uint32_t>(in, "rank");
        for (std::uint32_t k = 0; k < rank; ++k)
            r.shape.push_back(static_cast<long>(detail::read_pod<std::int64_t>(in, "dim")));
        const long n = r.numel();
        if (r.dtype == 0) {
            r.f32.resize(static_cast<size_t>(n));
            in.read(reinterpret_cast<char*>(r.f32.data()),
                    static_cast<std::streamsize>(n * static_cast<long>(sizeof(float))));
        } else {
            r.f64.resize(static_cast<size_t>(n));
            in.read(reinterpret_cast<char*>(r.f64.data()),
                    static_cast<std::streamsize>(n * static_cast<long>(sizeof(double))));
        }
        if (!in) throw DataError("truncated payload for entry " + r.name + " in " + path);
        records.push_back(std::move(r));
    }
    return records;
}

namespace detail {
template <typename T>
constexpr int dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const nn::ParamRegistry<T>& registry) {
    std::vector<TensorRecord> records;
    records.reserve(registry.all().size());
    for (const auto& p : registry.all()) {
        TensorRecord r;
        r.name = p->name;
        r.shape = p->value.shape();
        r.dtype = detail::dtype_tag<T>();
        if constexpr (sizeof(T) == 4)
            r.f32.assign(p->value.data().begin(), p->value.data().end());
        else
            r.f64.assign(p->value.data().begin(), p->value.data().end());
        records.push_back(std::move(r));
    }
    write_tensor_container(path, records);
}

// Strict loader: every registry parameter must be present with matching
// dtype and shape, and the file may not carry unknown entries. Catches
// model-config and vocabulary mismatches at load time.
template <typename T>
void load_checkpoint(const std::string& path, nn::ParamRegistry<T>& registry) {
    const auto records = read_tensor_container(path);
    std::unordered_map<std::string, const TensorRecord*> by_name;
    for (const auto& r : records) by_name[r.name] = &r;
    for (const auto& p : registry.all()) {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw DataError("checkpoint " + path + ": missing parameter " + p->name);
        const TensorRecord& r = *it->second;
        if (r.dtype != detail::dtype_tag<T>())
            throw DataError("checkpoint " + path + ": dtype mismatch for " + p->name);
        if (r.shape != p->value.shape())
            throw DataError("checkpoint " + path + ": shape mismatch for " + p->name +
                            " (file " + shape_str(r.shape) + ", model " +
                            shape_str(p->value.shape()) +
                            "); model config or vocabulary differs from the checkpoint");
        auto& dst = p->value.mutable_data();
        if constexpr (sizeof(T) == 4)
            std::copy(r.f32.begin(), r.f32.end(), dst.begin());
        else
            std::copy(r.f64.begin(), r.f64.end(), dst.begin());
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        std::string names;
        for (const auto& [n, _] : by_name) names += (names.empty() ? "" : ", ") + n;
        throw DataError("checkpoint " + path + ": unknown parameters not in model: " + names);
    }
}

// FNV-1a over a file's bytes; used for run-manifest digests.
inline std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

}  // namespace metor
