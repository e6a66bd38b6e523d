#include "nckge/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts need byte swaps");

namespace nckge {

namespace {

constexpr char kMagic[4] = {'N', 'C', 'K', 'G'};

template <class T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
    return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const CheckpointFile& ckpt) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(kMagic, 4);
        put<uint32_t>(out, ckpt.version);
        put<uint64_t>(out, ckpt.fingerprint);
        put<int64_t>(out, ckpt.epoch);
        put<uint64_t>(out, ckpt.records.size());
        for (const auto& r : ckpt.records) {
            put<uint32_t>(out, static_cast<uint32_t>(r.name.size()));
            out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
            put<uint8_t>(out, r.dtype);
            put<uint32_t>(out, static_cast<uint32_t>(r.extents.size()));
            for (uint64_t e : r.extents) put<uint64_t>(out, e);
            out.write(reinterpret_cast<const char*>(r.payload.data()),
                      static_cast<std::streamsize>(r.payload.size()));
        }
        if (!out) throw std::runtime_error("write failed for " + tmp);
    }
    std::remove(path.c_str());
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot move " + tmp + " into place");
}

CheckpointFile read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path + ": not a checkpoint file");
    CheckpointFile ckpt;
    ckpt.version = get<uint32_t>(in, path);
    if (ckpt.version != 1)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(ckpt.version));
    ckpt.fingerprint = get<uint64_t>(in, path);
    ckpt.epoch = get<int64_t>(in, path);
    const auto count = get<uint64_t>(in, path);
    ckpt.records.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        CheckpointRecord r;
        const auto name_len = get<uint32_t>(in, path);
        r.name.resize(name_len);
        in.read(r.name.data(), name_len);
        r.dtype = get<uint8_t>(in, path);
        if (r.dtype > kDtypeU64) throw std::runtime_error(path + ": bad dtype tag");
        const auto rank = get<uint32_t>(in, path);
        r.extents.resize(rank);
        for (auto& e : r.extents) e = get<uint64_t>(in, path);
        const size_t elem = r.dtype == kDtypeF32 ? 4 : 8;
        r.payload.resize(r.numel() * elem);
        in.read(reinterpret_cast<char*>(r.payload.data()),
                static_cast<std::streamsize>(r.payload.size()));
        if (!in) throw std::runtime_error(path + ": truncated checkpoint");
        ckpt.records.push_back(std::move(r));
    }
    return ckpt;
}

}  // namespace nckge
