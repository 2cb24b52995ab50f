#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dtomo/common.hpp"
#include "dtomo/deformation.hpp"
#include "dtomo/fft.hpp"
#include "dtomo/geometry.hpp"

namespace dtomo {

// SNR between a signal and its reference: 10 log10(Var(ref) / Var(s - ref)).
// Zero residual variance returns the +inf sentinel.
inline double snr_db(std::span<const double> s, std::span<const double> s_true) {
    if (s.size() != s_true.size()) throw ShapeError("snr_db: size mismatch");
    const std::size_t n = s.size();
    double mean_t = 0, mean_r = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_t += s_true[i];
        mean_r += s[i] - s_true[i];
    }
    mean_t /= n;
    mean_r /= n;
    double var_t = 0, var_r = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double dt = s_true[i] - mean_t;
        double dr = (s[i] - s_true[i]) - mean_r;
        var_t += dt * dt;
        var_r += dr * dr;
    }
    var_t /= n;
    var_r /= n;
    if (var_r <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(var_t / var_r);
}

inline double snr_db(const Image& s, const Image& s_true) {
    return snr_db(std::span<const double>(s.data), std::span<const double>(s_true.data));
}

// ---------------------------------------------------------------------------
// Fourier shell correlation.
// ---------------------------------------------------------------------------

struct FSCCurve {
    std::vector<double> freq;       // shell center frequency, cycles per unit
    std::vector<double> corr;       // correlation in [-1, 1]
    std::vector<long> counts;       // Fourier coefficients per shell
    std::vector<bool> degenerate;   // flagged shells with zero energy
};

inline FSCCurve fsc(const VolumeGrid& v1, const VolumeGrid& v2, int shells = 0) {
    if (v1.n != v2.n) throw ShapeError("fsc: volume sizes differ");
    const int n = v1.n;
    if (shells <= 0) shells = n / 2;

    std::vector<cdouble> f1(v1.data.size()), f2(v2.data.size());
    for (std::size_t i = 0; i < v1.data.size(); ++i) {
        f1[i] = cdouble(v1.data[i], 0.0);
        f2[i] = cdouble(v2.data[i], 0.0);
    }
    fft3d(f1, n, false);
    fft3d(f2, n, false);

    std::vector<double> num(shells, 0.0), d1(shells, 0.0), d2(shells, 0.0);
    std::vector<long> counts(shells, 0);
    auto signed_freq = [n](int k) { return k <= n / 2 ? k : k - n; };
    std::size_t idx = 0;
    for (int z = 0; z < n; ++z) {
        double kz = signed_freq(z);
        for (int y = 0; y < n; ++y) {
            double ky = signed_freq(y);
            for (int x = 0; x < n; ++x, ++idx) {
                double kx = signed_freq(x);
                double r = std::sqrt(kx * kx + ky * ky + kz * kz);
                int shell = static_cast<int>(std::floor(r + 0.5));
                if (shell >= shells) continue;
                num[shell] += (f1[idx] * std::conj(f2[idx])).real();
                d1[shell] += std::norm(f1[idx]);
                d2[shell] += std::norm(f2[idx]);
                counts[shell] += 1;
            }
        }
    }

    FSCCurve curve;
    curve.freq.resize(shells);
    curve.corr.resize(shells);
    curve.counts = counts;
    curve.degenerate.resize(shells, false);
    for (int s = 0; s < shells; ++s) {
        // DFT bin k corresponds to k/2 cycles per unit (box spans 2 units)
        curve.freq[s] = s / 2.0;
        double denom = std::sqrt(d1[s] * d2[s]);
        if (denom <= 0.0) {
            curve.corr[s] = 0.0;
            curve.degenerate[s] = true;
        } else {
            curve.corr[s] = num[s] / denom;
        }
    }
    return curve;
}

// First frequency where the curve crosses below the threshold, linearly
// interpolated; +inf sentinel when it never crosses.
inline double resolution_at_threshold(const FSCCurve& curve, double t) {
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("resolution threshold must be in (0,1)");
    const std::size_t n = curve.corr.size();
    if (n == 0) return std::numeric_limits<double>::infinity();
    if (curve.corr[0] < t) return curve.freq[0];
    for (std::size_t i = 1; i < n; ++i) {
        if (curve.corr[i] < t) {
            double c0 = curve.corr[i - 1], c1 = curve.corr[i];
            double f0 = curve.freq[i - 1], f1 = curve.freq[i];
            double w = (c0 - t) / (c0 - c1);
            return f0 + w * (f1 - f0);
        }
    }
    return std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Deformation-parameter errors (Table-1 style rows).
// ---------------------------------------------------------------------------

struct DeformErrors {
    double shift_px = 0.0;
    double rot_deg = 0.0;
    double local_px = 0.0;
    double warp_px = 0.0;
};

// Mean parameter errors between two deformation sets, evaluated on the
// detector pixel grid. Reported in pixels via the factor n/2; identity
// estimates therefore report the raw deformation magnitudes.
inline DeformErrors deformation_errors(const DeformationSet& truth, const DeformationSet& est,
                                       int n) {
    if (truth.count() != est.count())
        throw ShapeError("deformation_errors: tilt counts differ");
    const int m = truth.count();
    const double px = n / 2.0;
    DeformErrors e;
    double local_acc = 0.0, warp_acc = 0.0;
    long grid_points = 0;
    for (int i = 0; i < m; ++i) {
        const TiltDeformation& t = truth.tilts[i];
        const TiltDeformation& g = est.tilts[i];
        e.shift_px += (g.tau - t.tau).norm() * px;
        e.rot_deg += std::abs(g.alpha_deg() - t.alpha_deg());
        for (int iv = 0; iv < n; ++iv) {
            double y = pixel_center(iv, n);
            for (int iu = 0; iu < n; ++iu) {
                Vec2 x{pixel_center(iu, n), y};
                Vec2 lt = t.local.eval(x);
                Vec2 lg = g.local.eval(x);
                local_acc += (lg - lt).norm();
                Vec2 wt = warp_coords(t, x);
                Vec2 wg = warp_coords(g, x);
                warp_acc += (wg - wt).norm();
                ++grid_points;
            }
        }
    }
    e.shift_px /= m;
    e.rot_deg /= m;
    e.local_px = local_acc / grid_points * px;
    e.warp_px = warp_acc / grid_points * px;
    return e;
}

// ---------------------------------------------------------------------------
// Translation registration (gauge fixing before FSC).
// ---------------------------------------------------------------------------

struct Registration {
    int shift[3] = {0, 0, 0};  // (x, y, z) voxels applied to est
    double ncc = 0.0;
    VolumeGrid shifted;
};

namespace detail {

inline double ncc_at_shift(const VolumeGrid& est, const VolumeGrid& ref, int sx, int sy, int sz,
                           double ref_mean, double ref_sd) {
    const int n = est.n;
    const double total = static_cast<double>(n) * n * n;
    double se = 0, se2 = 0, ser = 0;
    int z0 = std::max(0, sz), z1 = n + std::min(0, sz);
    int y0 = std::max(0, sy), y1 = n + std::min(0, sy);
    int x0 = std::max(0, sx), x1 = n + std::min(0, sx);
    for (int z = z0; z < z1; ++z)
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
                double ev = est.at(z - sz, y - sy, x - sx);
                se += ev;
                se2 += ev * ev;
                ser += ev * ref.at(z, y, x);
            }
    double mean_e = se / total;
    double var_e = se2 / total - mean_e * mean_e;
    if (var_e <= 0 || ref_sd <= 0) return 0.0;
    double cov = ser / total - mean_e * ref_mean;
    return cov / (std::sqrt(var_e) * ref_sd);
}

}  // namespace detail

// Exhaustive integer shift search over +-radius per axis maximizing the
// normalized cross-correlation, applied with zero padding (no wraparound).
inline Registration register_volumes(const VolumeGrid& est, const VolumeGrid& ref,
                                     int radius = 0) {
    if (est.n != ref.n) throw ShapeError("register_volumes: sizes differ");
    const int n = est.n;
    if (radius <= 0) radius = n / 8;

    double ref_mean = 0;
    for (double v : ref.data) ref_mean += v;
    ref_mean /= ref.data.size();
    double ref_var = 0;
    for (double v : ref.data) ref_var += (v - ref_mean) * (v - ref_mean);
    ref_var /= ref.data.size();
    double ref_sd = std::sqrt(ref_var);

    Registration best;
    best.ncc = -2.0;
    for (int sz = -radius; sz <= radius; ++sz)
        for (int sy = -radius; sy <= radius; ++sy)
            for (int sx = -radius; sx <= radius; ++sx) {
                double ncc = detail::ncc_at_shift(est, ref, sx, sy, sz, ref_mean, ref_sd);
                if (ncc > best.ncc) {
                    best.ncc = ncc;
                    best.shift[0] = sx;
                    best.shift[1] = sy;
                    best.shift[2] = sz;
                }
            }

    best.shifted = VolumeGrid(n);
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                int zs = z - best.shift[2], ys = y - best.shift[1], xs = x - best.shift[0];
                if (zs >= 0 && zs < n && ys >= 0 && ys < n && xs >= 0 && xs < n)
                    best.shifted.at(z, y, x) = est.at(zs, ys, xs);
            }
    return best;
}

// Plain NCC between two equal-size grids (helper for oracles).
inline double ncc(const VolumeGrid& a, const VolumeGrid& b) {
    if (a.n != b.n) throw ShapeError("ncc: sizes differ");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        ma += a.data[i];
        mb += b.data[i];
    }
    ma /= a.data.size();
    mb /= b.data.size();
    double va = 0, vb = 0, cov = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double da = a.data[i] - ma, db = b.data[i] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    if (va <= 0 || vb <= 0) return 0.0;
    return cov / std::sqrt(va * vb);
}

struct MetricsReportRow {
    std::string method;  // EST | EST-W/O | FBP
    DeformErrors deform;
    double proj_snr_db = 0.0;
};

}  // namespace dtomo
