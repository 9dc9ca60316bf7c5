#include "fw/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

namespace fw {

namespace {

constexpr std::uint32_t kVersion = 1;

void put_u16(std::ofstream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::ifstream& in, const std::string& path) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2))
        throw TruncatedFileError("truncated checkpoint: " + path);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw TruncatedFileError("truncated checkpoint: " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write("FWCK", 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        if (name.size() > 0xffff) throw DataError("checkpoint entry name too long");
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t i = 0; i < t.rank(); ++i)
            put_u32(out, static_cast<std::uint32_t>(t.shape()[i]));
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const float f = static_cast<float>(t.data()[i]);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    char magic[4];
    if (!in.read(magic, 4)) throw TruncatedFileError("truncated checkpoint: " + path);
    if (std::memcmp(magic, "FWCK", 4) != 0) throw BadMagicError("bad magic in " + path);
    const std::uint32_t version = get_u32(in, path);
    if (version != kVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = get_u32(in, path);
    std::map<std::string, Tensor> entries;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = get_u16(in, path);
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len))
            throw TruncatedFileError("truncated checkpoint: " + path);
        const std::uint32_t ndim = get_u32(in, path);
        if (ndim > 8) throw DataError("implausible entry rank in " + path);
        std::vector<std::int64_t> shape(ndim);
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<std::int64_t>(get_u32(in, path));
            if (d <= 0) throw DataError("bad dimension in " + path);
            numel *= d;
        }
        std::vector<double> data(static_cast<std::size_t>(numel));
        for (auto& v : data) {
            const std::uint32_t bits = get_u32(in, path);
            float f;
            std::memcpy(&f, &bits, 4);
            v = static_cast<double>(f);
        }
        entries.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    char extra;
    if (in.read(&extra, 1)) throw DataError("trailing bytes in " + path);
    return entries;
}

}  // namespace fw
