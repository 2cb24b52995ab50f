#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <vector>

#include "dtomo/common.hpp"

namespace dtomo::binio {

// Little-endian serialization, independent of host byte order.

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    put_bytes(os, b, 4);
}

inline void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

inline void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(os, u);
}

inline bool get_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount()) == n;
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!get_bytes(is, b, 4)) throw IoError(std::string("truncated read: ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::int32_t get_i32(std::istream& is, const char* what) {
    return static_cast<std::int32_t>(get_u32(is, what));
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    std::uint64_t lo = get_u32(is, what);
    std::uint64_t hi = get_u32(is, what);
    return lo | (hi << 32);
}

inline float get_f32(std::istream& is, const char* what) {
    std::uint32_t u = get_u32(is, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline double get_f64(std::istream& is, const char* what) {
    std::uint64_t u = get_u64(is, what);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline void put_f64_array(std::ostream& os, const std::vector<double>& v) {
    put_u64(os, v.size());
    for (double x : v) put_f64(os, x);
}

inline std::vector<double> get_f64_array(std::istream& is, const char* what) {
    std::uint64_t n = get_u64(is, what);
    std::vector<double> v(n);
    for (auto& x : v) x = get_f64(is, what);
    return v;
}

}  // namespace dtomo::binio
