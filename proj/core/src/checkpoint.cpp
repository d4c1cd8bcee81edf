#include "t2lm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "t2lm/errors.hpp"

namespace t2lm {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    if (!is) throw IoError("checkpoint truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("T2LM", 4);
    write_u32(os, 1u);
    write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xffff) throw ValueError("tensor name too long: " + t.name);
        if (t.shape.empty() || t.shape.size() > 255)
            throw ValueError("bad tensor rank for: " + t.name);
        std::size_t n = 1;
        for (int e : t.shape) {
            if (e <= 0) throw ValueError("bad tensor extent for: " + t.name);
            n *= static_cast<std::size_t>(e);
        }
        if (n != t.data.size()) throw ValueError("tensor data/shape mismatch: " + t.name);
        write_u16(os, static_cast<std::uint16_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        os.put(static_cast<char>(t.shape.size()));
        for (int e : t.shape) write_u32(os, static_cast<std::uint32_t>(e));
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "T2LM", 4) != 0)
        throw IoError("not a T2LM checkpoint: " + path);
    const auto version = read_u32(is);
    if (version != 1) throw IoError("unsupported checkpoint version");
    const auto count = read_u32(is);
    if (count > (1u << 20)) throw IoError("implausible tensor count");
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto name_len = read_u16(is);
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        const int ndim = is.get();
        if (!is || ndim < 1) throw IoError("checkpoint truncated");
        std::size_t n = 1;
        for (int k = 0; k < ndim; ++k) {
            const auto e = read_u32(is);
            if (e == 0 || e > (1u << 28)) throw IoError("implausible tensor extent");
            t.shape.push_back(static_cast<int>(e));
            n *= e;
        }
        t.data.resize(n);
        is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * 4));
        if (!is) throw IoError("checkpoint truncated: " + path);
        out.push_back(std::move(t));
    }
    return out;
}

std::string sidecar_path(const std::string& ckpt_path) { return ckpt_path + ".json"; }

void write_sidecar(const std::string& ckpt_path, const std::string& json_text) {
    const auto path = sidecar_path(ckpt_path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(json_text.data(), static_cast<std::streamsize>(json_text.size()));
    os.put('\n');
    if (!os) throw IoError("write failed: " + path);
}

std::string read_sidecar(const std::string& ckpt_path) {
    const auto path = sidecar_path(ckpt_path);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string config_hash(const std::string& canonical) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace t2lm
