#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dtomo/binio.hpp"
#include "dtomo/common.hpp"
#include "dtomo/geometry.hpp"

namespace dtomo {

// Distinct MRC failure kinds so callers can tell malformed files apart.
struct MrcBadMagic : IoError {
    using IoError::IoError;
};
struct MrcUnsupportedMode : IoError {
    using IoError::IoError;
};
struct MrcTruncated : IoError {
    using IoError::IoError;
};

namespace detail {

// Whole-file atomic write: stage to a temp file, then rename into place.
template <typename WriteFn>
void atomic_write(const std::string& path, WriteFn&& fn) {
    std::filesystem::path target(path);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for writing: " + tmp.string());
        fn(os);
        os.flush();
        if (!os) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, target);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MRC2014, mode 2 (32-bit reals), 1024-byte header.
// Layout reference: columns (x) fastest, then rows (y), then sections (z).
// ---------------------------------------------------------------------------

struct MrcData {
    int nx = 0, ny = 0, nz = 0;
    std::vector<float> values;  // x fastest
};

namespace detail {

inline void write_mrc_stream(std::ostream& os, const MrcData& d, int ispg) {
    float dmin = 0, dmax = 0;
    double dsum = 0, dsum2 = 0;
    if (!d.values.empty()) {
        dmin = dmax = d.values[0];
        for (float v : d.values) {
            dmin = std::min(dmin, v);
            dmax = std::max(dmax, v);
            dsum += v;
            dsum2 += static_cast<double>(v) * v;
        }
    }
    const double n = std::max<std::size_t>(1, d.values.size());
    const float dmean = static_cast<float>(dsum / n);
    const float rms = static_cast<float>(std::sqrt(std::max(0.0, dsum2 / n - (dsum / n) * (dsum / n))));

    binio::put_i32(os, d.nx);                      // 1  nx
    binio::put_i32(os, d.ny);                      // 2  ny
    binio::put_i32(os, d.nz);                      // 3  nz
    binio::put_i32(os, 2);                         // 4  mode 2 = float32
    for (int i = 0; i < 3; ++i) binio::put_i32(os, 0);   // 5-7  nstart
    binio::put_i32(os, d.nx);                      // 8  mx
    binio::put_i32(os, d.ny);                      // 9  my
    binio::put_i32(os, d.nz);                      // 10 mz
    binio::put_f32(os, static_cast<float>(d.nx));  // 11-13 cella (1 A per voxel)
    binio::put_f32(os, static_cast<float>(d.ny));
    binio::put_f32(os, static_cast<float>(d.nz));
    for (int i = 0; i < 3; ++i) binio::put_f32(os, 90.0f);  // 14-16 cellb
    binio::put_i32(os, 1);                         // 17 mapc
    binio::put_i32(os, 2);                         // 18 mapr
    binio::put_i32(os, 3);                         // 19 maps
    binio::put_f32(os, dmin);                      // 20
    binio::put_f32(os, dmax);                      // 21
    binio::put_f32(os, dmean);                     // 22
    binio::put_i32(os, ispg);                      // 23 ispg
    binio::put_i32(os, 0);                         // 24 nsymbt
    for (int w = 25; w <= 49; ++w) binio::put_i32(os, 0);  // extra
    for (int i = 0; i < 3; ++i) binio::put_f32(os, 0.0f);  // 50-52 origin
    os.write("MAP ", 4);                           // 53 map stamp (bytes 208-211)
    const unsigned char machst[4] = {0x44, 0x44, 0x00, 0x00};  // little-endian
    binio::put_bytes(os, machst, 4);               // 54
    binio::put_f32(os, rms);                       // 55
    binio::put_i32(os, 1);                         // 56 nlabl
    char label[80] = {};
    std::snprintf(label, sizeof(label), "deformtomo");
    os.write(label, 80);
    std::vector<char> pad(1024 - 224 - 80, 0);
    os.write(pad.data(), static_cast<std::streamsize>(pad.size()));

    for (float v : d.values) binio::put_f32(os, v);
}

}  // namespace detail

inline void write_mrc(const VolumeGrid& vol, const std::string& path) {
    if (!all_finite(vol.data)) throw NumericsError("write_mrc: non-finite volume data");
    MrcData d;
    d.nx = d.ny = d.nz = vol.n;
    d.values.reserve(vol.data.size());
    for (double v : vol.data) d.values.push_back(static_cast<float>(v));
    detail::atomic_write(path, [&](std::ostream& os) { detail::write_mrc_stream(os, d, 1); });
}

inline void write_mrc(const std::vector<Image>& stack, const std::string& path) {
    if (stack.empty()) throw ConfigError("write_mrc: empty stack");
    MrcData d;
    d.nx = d.ny = stack[0].n;
    d.nz = static_cast<int>(stack.size());
    for (const Image& img : stack) {
        if (img.n != d.nx) throw ShapeError("write_mrc: ragged stack");
        if (!all_finite(img.data)) throw NumericsError("write_mrc: non-finite image data");
        for (double v : img.data) d.values.push_back(static_cast<float>(v));
    }
    detail::atomic_write(path, [&](std::ostream& os) { detail::write_mrc_stream(os, d, 0); });
}

inline MrcData read_mrc(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open MRC file: " + path);
    std::vector<unsigned char> header(1024);
    if (!binio::get_bytes(is, header.data(), 1024))
        throw MrcTruncated("MRC header truncated (need 1024 bytes): " + path);

    if (std::string(reinterpret_cast<char*>(header.data() + 208), 4) != "MAP ")
        throw MrcBadMagic("MRC map stamp missing at bytes 208-211: " + path);

    bool swap = false;
    unsigned char m0 = header[212];
    if (m0 == 0x44) {
        swap = false;
    } else if (m0 == 0x11) {
        swap = true;
    } else {
        throw MrcBadMagic("MRC machine stamp unrecognized: " + path);
    }

    auto read_i32 = [&](int word) {
        const unsigned char* p = header.data() + (word - 1) * 4;
        std::uint32_t v;
        if (swap)
            v = (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
                (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
        else
            v = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
        return static_cast<std::int32_t>(v);
    };

    MrcData d;
    d.nx = read_i32(1);
    d.ny = read_i32(2);
    d.nz = read_i32(3);
    int mode = read_i32(4);
    int nsymbt = read_i32(24);
    if (mode != 2) throw MrcUnsupportedMode("MRC mode " + std::to_string(mode) +
                                            " unsupported (only mode 2): " + path);
    if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0 || d.nx > 100000 || d.ny > 100000 || d.nz > 100000)
        throw MrcBadMagic("MRC dimensions out of range: " + path);
    if (nsymbt < 0 || nsymbt > (1 << 26)) throw MrcBadMagic("MRC nsymbt out of range: " + path);
    if (nsymbt > 0) is.seekg(nsymbt, std::ios::cur);

    const std::size_t count = static_cast<std::size_t>(d.nx) * d.ny * d.nz;
    std::vector<unsigned char> payload(count * 4);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    const std::size_t got = static_cast<std::size_t>(is.gcount());
    if (got != payload.size())
        throw MrcTruncated("MRC payload truncated: expected " + std::to_string(payload.size()) +
                           " bytes, got " + std::to_string(got) + ": " + path);

    d.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* p = payload.data() + i * 4;
        std::uint32_t u;
        if (swap)
            u = (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
                (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
        else
            u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
        float f;
        std::memcpy(&f, &u, 4);
        d.values[i] = f;
    }
    return d;
}

inline VolumeGrid mrc_to_volume(const MrcData& d) {
    if (d.nx != d.ny || d.ny != d.nz)
        throw ConfigError("MRC volume is not cubic: " + std::to_string(d.nx) + "x" +
                          std::to_string(d.ny) + "x" + std::to_string(d.nz));
    VolumeGrid v(d.nx);
    for (std::size_t i = 0; i < d.values.size(); ++i) v.data[i] = d.values[i];
    return v;
}

inline std::vector<Image> mrc_to_stack(const MrcData& d) {
    if (d.nx != d.ny) throw ConfigError("MRC stack sections are not square");
    std::vector<Image> stack(d.nz, Image(d.nx));
    std::size_t idx = 0;
    for (int m = 0; m < d.nz; ++m)
        for (double& v : stack[m].data) v = d.values[idx++];
    return stack;
}

// ---------------------------------------------------------------------------
// CSV (RFC-4180 subset: no quoting needed for our numeric/label fields).
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

inline void write_csv(const std::string& path, const std::string& header,
                      const std::vector<std::vector<std::string>>& rows) {
    detail::atomic_write(path, [&](std::ostream& os) {
        os << header << "\r\n";
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) os << ',';
                os << row[i];
            }
            os << "\r\n";
        }
    });
}

// ---------------------------------------------------------------------------
// Minimal 8-bit grayscale PNG writer (stored deflate blocks, no compression).
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t crc32_update(std::uint32_t crc, const unsigned char* p, std::size_t n) {
    static std::uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    crc ^= 0xffffffffu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

inline void png_chunk(std::ostream& os, const char type[4], const std::vector<unsigned char>& data) {
    unsigned char len[4] = {static_cast<unsigned char>(data.size() >> 24),
                            static_cast<unsigned char>(data.size() >> 16),
                            static_cast<unsigned char>(data.size() >> 8),
                            static_cast<unsigned char>(data.size())};
    os.write(reinterpret_cast<char*>(len), 4);
    std::vector<unsigned char> crc_buf(4 + data.size());
    std::memcpy(crc_buf.data(), type, 4);
    if (!data.empty()) std::memcpy(crc_buf.data() + 4, data.data(), data.size());
    std::uint32_t crc = crc32_update(0, crc_buf.data(), crc_buf.size());
    os.write(type, 4);
    if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()),
                                static_cast<std::streamsize>(data.size()));
    unsigned char crcb[4] = {static_cast<unsigned char>(crc >> 24),
                             static_cast<unsigned char>(crc >> 16),
                             static_cast<unsigned char>(crc >> 8), static_cast<unsigned char>(crc)};
    os.write(reinterpret_cast<char*>(crcb), 4);
}

}  // namespace detail

inline void write_png_gray8(const std::string& path, int width, int height,
                            const std::vector<unsigned char>& pixels) {
    if (static_cast<std::size_t>(width) * height != pixels.size())
        throw ShapeError("write_png_gray8: pixel count mismatch");
    detail::atomic_write(path, [&](std::ostream& os) {
        static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
        os.write(reinterpret_cast<const char*>(sig), 8);

        std::vector<unsigned char> ihdr(13);
        auto put_be = [](unsigned char* p, std::uint32_t v) {
            p[0] = static_cast<unsigned char>(v >> 24);
            p[1] = static_cast<unsigned char>(v >> 16);
            p[2] = static_cast<unsigned char>(v >> 8);
            p[3] = static_cast<unsigned char>(v);
        };
        put_be(ihdr.data(), static_cast<std::uint32_t>(width));
        put_be(ihdr.data() + 4, static_cast<std::uint32_t>(height));
        ihdr[8] = 8;   // bit depth
        ihdr[9] = 0;   // grayscale
        ihdr[10] = 0;  // compression
        ihdr[11] = 0;  // filter
        ihdr[12] = 0;  // interlace
        detail::png_chunk(os, "IHDR", ihdr);

        // raw scanline stream: filter byte 0 + row
        std::vector<unsigned char> raw;
        raw.reserve(static_cast<std::size_t>(height) * (width + 1));
        for (int y = 0; y < height; ++y) {
            raw.push_back(0);
            raw.insert(raw.end(), pixels.begin() + static_cast<std::size_t>(y) * width,
                       pixels.begin() + static_cast<std::size_t>(y + 1) * width);
        }
        // adler32
        std::uint32_t s1 = 1, s2 = 0;
        for (unsigned char b : raw) {
            s1 = (s1 + b) % 65521;
            s2 = (s2 + s1) % 65521;
        }
        std::uint32_t adler = (s2 << 16) | s1;

        std::vector<unsigned char> idat;
        idat.push_back(0x78);
        idat.push_back(0x01);
        std::size_t pos = 0;
        while (pos < raw.size() || raw.empty()) {
            std::size_t block = std::min<std::size_t>(65535, raw.size() - pos);
            bool final = (pos + block == raw.size());
            idat.push_back(final ? 1 : 0);  // BFINAL + BTYPE=00 (stored)
            idat.push_back(static_cast<unsigned char>(block & 0xff));
            idat.push_back(static_cast<unsigned char>(block >> 8));
            idat.push_back(static_cast<unsigned char>(~block & 0xff));
            idat.push_back(static_cast<unsigned char>((~block >> 8) & 0xff));
            idat.insert(idat.end(), raw.begin() + pos, raw.begin() + pos + block);
            pos += block;
            if (raw.empty()) break;
        }
        idat.push_back(static_cast<unsigned char>(adler >> 24));
        idat.push_back(static_cast<unsigned char>(adler >> 16));
        idat.push_back(static_cast<unsigned char>(adler >> 8));
        idat.push_back(static_cast<unsigned char>(adler));
        detail::png_chunk(os, "IDAT", idat);
        detail::png_chunk(os, "IEND", {});
    });
}

// Linear [lo, hi] -> [0, 255] quantization; degenerate range maps to 0.
inline std::vector<unsigned char> quantize_gray(const std::vector<double>& values, double lo,
                                                double hi) {
    std::vector<unsigned char> out(values.size(), 0);
    if (!(hi > lo)) return out;
    const double scale = 255.0 / (hi - lo);
    for (std::size_t i = 0; i < values.size(); ++i) {
        double v = (values[i] - lo) * scale;
        v = std::max(0.0, std::min(255.0, std::round(v)));
        out[i] = static_cast<unsigned char>(v);
    }
    return out;
}

// Central z-slice of a volume, quantized against the volume-wide range.
inline void write_volume_slice_png(const VolumeGrid& vol, const std::string& path) {
    double lo = vol.data[0], hi = vol.data[0];
    for (double v : vol.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const int zc = vol.n / 2;
    std::vector<double> slice(static_cast<std::size_t>(vol.n) * vol.n);
    for (int y = 0; y < vol.n; ++y)
        for (int x = 0; x < vol.n; ++x) slice[static_cast<std::size_t>(y) * vol.n + x] = vol.at(zc, y, x);
    write_png_gray8(path, vol.n, vol.n, quantize_gray(slice, lo, hi));
}

inline void write_image_png(const Image& img, const std::string& path) {
    double lo = img.data[0], hi = img.data[0];
    for (double v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    write_png_gray8(path, img.n, img.n, quantize_gray(img.data, lo, hi));
}

}  // namespace dtomo
