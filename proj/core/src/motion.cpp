#include "t2lm/motion.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "t2lm/errors.hpp"

namespace t2lm {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("motion file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Motion Motion::empty(int frames, int dim, int fps) {
    Motion m;
    m.frames = frames;
    m.dim = dim;
    m.fps = fps;
    m.values.assign(static_cast<std::size_t>(frames) * dim, 0.0f);
    return m;
}

void validate(const Motion& m) {
    if (m.frames < 1 || m.dim < 1) throw ValueError("motion: empty frame grid");
    if (m.values.size() != static_cast<std::size_t>(m.frames) * m.dim)
        throw ValueError("motion: value buffer does not match shape");
    for (float v : m.values) {
        if (!std::isfinite(v)) throw ValueError("motion: non-finite value");
    }
}

void write_mot(const std::string& path, const Motion& m) {
    validate(m);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("MOT1", 4);
    write_u32(os, static_cast<std::uint32_t>(m.frames));
    write_u32(os, static_cast<std::uint32_t>(m.dim));
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(m.values.data()),
             static_cast<std::streamsize>(m.values.size() * 4));
    if (!os) throw IoError("write failed: " + path);
}

Motion read_mot(const std::string& path, int fps) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MOT1", 4) != 0)
        throw IoError("not a MOT1 file: " + path);
    const auto T = read_u32(is);
    const auto d = read_u32(is);
    if (T == 0 || d == 0 || T > (1u << 24) || d > (1u << 16))
        throw IoError("implausible MOT1 header: " + path);
    Motion m;
    m.frames = static_cast<int>(T);
    m.dim = static_cast<int>(d);
    m.fps = fps;
    m.values.resize(static_cast<std::size_t>(T) * d);
    is.read(reinterpret_cast<char*>(m.values.data()),
            static_cast<std::streamsize>(m.values.size() * 4));
    if (!is) throw IoError("motion file truncated: " + path);
    validate(m);
    return m;
}

}  // namespace t2lm
