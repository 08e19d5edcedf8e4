#include "panoctx/raster_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace panoctx {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("truncated EDEP stream");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_edep(const EquirectRaster& depth, std::ostream& os) {
    depth.validate();
    if (depth.channels != 1) throw DataError("EDEP requires a 1-channel raster");
    os.write("EDEP", 4);
    put_u32(os, static_cast<uint32_t>(depth.width));
    put_u32(os, static_cast<uint32_t>(depth.height));
    for (double d : depth.data) {
        float f = static_cast<float>(d);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(os, bits);
    }
}

void write_edep(const EquirectRaster& depth, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    write_edep(depth, os);
}

EquirectRaster read_edep(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EDEP", 4) != 0) throw DataError("bad EDEP magic");
    uint32_t w = get_u32(is), h = get_u32(is);
    if (w < 2 || h != w / 2 || w > (1u << 20)) throw DataError("bad EDEP dimensions");
    EquirectRaster out(static_cast<int>(w), static_cast<int>(h), 1);
    for (double& d : out.data) {
        uint32_t bits = get_u32(is);
        float f;
        std::memcpy(&f, &bits, 4);
        d = f;
    }
    return out;
}

EquirectRaster read_edep(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    return read_edep(is);
}

void write_ppm(const EquirectRaster& rgb, const std::string& path) {
    rgb.validate();
    if (rgb.channels != 3) throw DataError("PPM requires a 3-channel raster");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P6\n" << rgb.width << " " << rgb.height << "\n255\n";
    for (double v : rgb.data) {
        int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        os.put(static_cast<char>(q));
    }
}

EquirectRaster read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    std::string magic;
    int w, h, maxval;
    is >> magic >> w >> h >> maxval;
    if (magic != "P6" || maxval != 255) throw DataError("unsupported PPM variant");
    is.get();  // single whitespace after header
    EquirectRaster out(w, h, 3);
    for (double& v : out.data) {
        int c = is.get();
        if (c == EOF) throw DataError("truncated PPM");
        v = c / 255.0;
    }
    return out;
}

}  // namespace panoctx
