#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "nckge/tensor.hpp"

namespace nckge {

enum : uint8_t { kDtypeF32 = 0, kDtypeF64 = 1, kDtypeU64 = 2 };

struct CheckpointRecord {
    std::string name;
    uint8_t dtype = kDtypeF64;
    std::vector<uint64_t> extents;
    std::vector<uint8_t> payload;

    uint64_t numel() const {
        uint64_t n = 1;
        for (uint64_t e : extents) n *= e;
        return n;
    }
};

struct CheckpointFile {
    uint32_t version = 1;
    uint64_t fingerprint = 0;
    int64_t epoch = 0;
    std::vector<CheckpointRecord> records;

    const CheckpointRecord* find(const std::string& name) const {
        for (const auto& r : records)
            if (r.name == name) return &r;
        return nullptr;
    }
    const CheckpointRecord& require(const std::string& name) const {
        const CheckpointRecord* r = find(name);
        if (!r) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        return *r;
    }
};

void write_checkpoint(const std::string& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint(const std::string& path);

template <class T>
uint8_t dtype_of();
template <>
inline uint8_t dtype_of<float>() { return kDtypeF32; }
template <>
inline uint8_t dtype_of<double>() { return kDtypeF64; }
template <>
inline uint8_t dtype_of<uint64_t>() { return kDtypeU64; }

template <class T>
CheckpointRecord make_record(const std::string& name, const std::vector<uint64_t>& extents,
                             const T* data, size_t count) {
    CheckpointRecord r;
    r.name = name;
    r.dtype = dtype_of<T>();
    r.extents = extents;
    if (r.numel() != count)
        throw std::invalid_argument("checkpoint record '" + name + "': extents disagree with data");
    r.payload.resize(count * sizeof(T));
    std::memcpy(r.payload.data(), data, r.payload.size());
    return r;
}

template <class S>
CheckpointRecord tensor_record(const std::string& name, const Tensor<S>& t) {
    std::vector<uint64_t> ext;
    for (int i = 0; i < t.rank(); ++i) ext.push_back(static_cast<uint64_t>(t.dim(i)));
    return make_record(name, ext, t.data(), static_cast<size_t>(t.numel()));
}

template <class T>
std::vector<T> record_values(const CheckpointRecord& r) {
    if (r.dtype != dtype_of<T>())
        throw std::runtime_error("checkpoint: dtype mismatch reading '" + r.name + "'");
    std::vector<T> out(r.numel());
    if (r.payload.size() != out.size() * sizeof(T))
        throw std::runtime_error("checkpoint: truncated payload in '" + r.name + "'");
    std::memcpy(out.data(), r.payload.data(), r.payload.size());
    return out;
}

template <class S>
void load_into_tensor(const CheckpointRecord& r, Tensor<S>& t) {
    if (static_cast<uint64_t>(t.numel()) != r.numel() ||
        static_cast<size_t>(t.rank()) != r.extents.size())
        throw std::runtime_error("checkpoint: shape mismatch for '" + r.name + "'");
    for (int i = 0; i < t.rank(); ++i)
        if (static_cast<uint64_t>(t.dim(i)) != r.extents[static_cast<size_t>(i)])
            throw std::runtime_error("checkpoint: shape mismatch for '" + r.name + "'");
    auto vals = record_values<S>(r);
    std::copy(vals.begin(), vals.end(), t.data());
}

}  // namespace nckge
