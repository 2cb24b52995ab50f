#pragma once

#include <complex>
#include <vector>

#include "dtomo/common.hpp"

namespace dtomo {

using cdouble = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

inline void fft_pow2(std::vector<cdouble>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n < 2) return;
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        cdouble wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cdouble w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                cdouble u = a[i + j];
                cdouble v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

}  // namespace detail

// In-place DFT for any length; power-of-two sizes use the radix-2 kernel,
// everything else goes through Bluestein's chirp-z reduction.
inline void fft(std::vector<cdouble>& a, bool inverse = false) {
    const std::size_t n = a.size();
    if (n < 2) return;
    if (detail::is_pow2(n)) {
        detail::fft_pow2(a, inverse);
        return;
    }
    // Bluestein
    std::size_t l = 1;
    while (l < 2 * n - 1) l <<= 1;
    std::vector<cdouble> u(l, cdouble{0, 0}), v(l, cdouble{0, 0});
    std::vector<cdouble> chirp(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the phase argument small
        std::size_t k2 = (k * k) % (2 * n);
        double ang = sign * kPi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = cdouble(std::cos(ang), std::sin(ang));
    }
    for (std::size_t k = 0; k < n; ++k) u[k] = a[k] * chirp[k];
    v[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) v[k] = v[l - k] = std::conj(chirp[k]);
    detail::fft_pow2(u, false);
    detail::fft_pow2(v, false);
    for (std::size_t k = 0; k < l; ++k) u[k] *= v[k];
    detail::fft_pow2(u, true);
    for (std::size_t k = 0; k < n; ++k) a[k] = u[k] * chirp[k];
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

// Separable 3D DFT of an n^3 array laid out (z, y, x), x fastest.
inline void fft3d(std::vector<cdouble>& a, int n, bool inverse = false) {
    if (a.size() != static_cast<std::size_t>(n) * n * n)
        throw ShapeError("fft3d: array size does not match n^3");
    std::vector<cdouble> line(n);
    // x lines
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y) {
            std::size_t base = (static_cast<std::size_t>(z) * n + y) * n;
            for (int x = 0; x < n; ++x) line[x] = a[base + x];
            fft(line, inverse);
            for (int x = 0; x < n; ++x) a[base + x] = line[x];
        }
    // y lines
    for (int z = 0; z < n; ++z)
        for (int x = 0; x < n; ++x) {
            std::size_t base = static_cast<std::size_t>(z) * n * n + x;
            for (int y = 0; y < n; ++y) line[y] = a[base + static_cast<std::size_t>(y) * n];
            fft(line, inverse);
            for (int y = 0; y < n; ++y) a[base + static_cast<std::size_t>(y) * n] = line[y];
        }
    // z lines
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            std::size_t base = static_cast<std::size_t>(y) * n + x;
            std::size_t stride = static_cast<std::size_t>(n) * n;
            for (int z = 0; z < n; ++z) line[z] = a[base + static_cast<std::size_t>(z) * stride];
            fft(line, inverse);
            for (int z = 0; z < n; ++z) a[base + static_cast<std::size_t>(z) * stride] = line[z];
        }
}

}  // namespace dtomo
