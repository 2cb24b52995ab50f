#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <vector>

#include "dtomo/binio.hpp"
#include "dtomo/common.hpp"
#include "dtomo/geometry.hpp"
#include "dtomo/neural_field.hpp"
#include "dtomo/rng.hpp"

namespace dtomo {

// Per-tilt deformation D(phi) = L(gamma) S(tau) R2D(alpha), realized as the
// coordinate pull-back
//   w(x) = R_{-alpha} (x + l(x) + tau),
// so the deformed image value at x is the undeformed image sampled at w(x).
// The same composition is used by the simulator (dense ground-truth fields)
// and the estimator (per-tilt warp networks), so the convention cancels in
// every evaluation.

struct GlobalDeformParams {
    double alpha_deg = 0.0;
    Vec2 tau;  // normalized detector units; 1 unit = N/2 pixels
};

struct Mat2 {
    double a = 1, b = 0, c = 0, d = 1;  // [[a, b], [c, d]]
    Vec2 apply(const Vec2& v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
};

inline Mat2 rot2(double angle_rad) {
    double c = std::cos(angle_rad), s = std::sin(angle_rad);
    return {c, -s, s, c};
}

// Dense displacement field on the pixel grid, normalized units, (v,u,[dx,dy]).
struct DenseField {
    int n = 0;
    std::vector<double> data;

    DenseField() = default;
    explicit DenseField(int n_) : n(n_), data(static_cast<std::size_t>(n_) * n_ * 2, 0.0) {}

    double& at(int v, int u, int comp) {
        return data[(static_cast<std::size_t>(v) * n + u) * 2 + comp];
    }
    double at(int v, int u, int comp) const {
        return data[(static_cast<std::size_t>(v) * n + u) * 2 + comp];
    }

    // Bilinear evaluation at a normalized coordinate, zero outside [-1,1]^2.
    Vec2 eval(const Vec2& x) const {
        auto au = detail::axis_interp(n, x.x);
        auto av = detail::axis_interp(n, x.y);
        Vec2 acc{0, 0};
        for (int dv = 0; dv < 2; ++dv) {
            int v = av.i0 + dv;
            double wv = dv ? av.w : 1.0 - av.w;
            if (wv == 0.0 || v < 0 || v >= n) continue;
            for (int du = 0; du < 2; ++du) {
                int u = au.i0 + du;
                double wu = du ? au.w : 1.0 - au.w;
                if (wu == 0.0 || u < 0 || u >= n) continue;
                double w = wv * wu;
                acc.x += w * at(v, u, 0);
                acc.y += w * at(v, u, 1);
            }
        }
        return acc;
    }

    double max_norm() const {
        double worst = 0.0;
        for (std::size_t i = 0; i + 1 < data.size(); i += 2)
            worst = std::max(worst, std::hypot(data[i], data[i + 1]));
        return worst;
    }
};

// Local displacement l(x): absent (identity), a dense ground-truth field, or
// a learned warp network.
struct LocalDisplacement {
    enum class Kind { Zero, Field, Net } kind = Kind::Zero;
    DenseField field;
    LocalWarpNet net;

    Vec2 eval(const Vec2& x) const {
        switch (kind) {
            case Kind::Zero: return {0, 0};
            case Kind::Field: return field.eval(x);
            case Kind::Net: return net.eval(x);
        }
        return {0, 0};
    }

    static LocalDisplacement zero() { return {}; }
    static LocalDisplacement from_field(DenseField f) {
        LocalDisplacement d;
        d.kind = Kind::Field;
        d.field = std::move(f);
        return d;
    }
    static LocalDisplacement from_net(LocalWarpNet n) {
        LocalDisplacement d;
        d.kind = Kind::Net;
        d.net = std::move(n);
        return d;
    }
};

struct TiltDeformation {
    double alpha_rad = 0.0;
    Vec2 tau;
    LocalDisplacement local;

    double alpha_deg() const { return rad2deg(alpha_rad); }
    GlobalDeformParams globals() const { return {alpha_deg(), tau}; }
};

struct DeformationSet {
    std::vector<TiltDeformation> tilts;

    int count() const { return static_cast<int>(tilts.size()); }

    static DeformationSet identity(int m) {
        DeformationSet s;
        s.tilts.resize(m);
        return s;
    }
};

inline Vec2 warp_coords(const TiltDeformation& phi, const Vec2& x) {
    Vec2 q = x + phi.local.eval(x) + phi.tau;
    if (phi.alpha_rad == 0.0) return q;
    return rot2(-phi.alpha_rad).apply(q);
}

// Warp value plus the partials needed to chain gradients through (alpha, tau)
// and into the local displacement. dw/dtau = dw/dl = R(-alpha).
struct WarpJacobian {
    Vec2 w;
    Mat2 dw_dq;       // = R(-alpha), also dw/dtau and dw/dl
    Vec2 dw_dalpha;   // derivative w.r.t. alpha in radians
};

inline WarpJacobian warp_coords_jacobian(const TiltDeformation& phi, const Vec2& x) {
    Vec2 q = x + phi.local.eval(x) + phi.tau;
    double c = std::cos(phi.alpha_rad), s = std::sin(phi.alpha_rad);
    // R(-a) = [[c, s], [-s, c]];  d/da R(-a) = [[-s, c], [-c, -s]]
    WarpJacobian j;
    j.dw_dq = {c, s, -s, c};
    j.w = j.dw_dq.apply(q);
    j.dw_dalpha = {-s * q.x + c * q.y, -c * q.x - s * q.y};
    return j;
}

// Bilinear image sampler with zero padding, matching the grid conventions.
inline double sample_image(const Image& img, const Vec2& x) {
    auto au = detail::axis_interp(img.n, x.x);
    auto av = detail::axis_interp(img.n, x.y);
    double acc = 0.0;
    for (int dv = 0; dv < 2; ++dv) {
        int v = av.i0 + dv;
        double wv = dv ? av.w : 1.0 - av.w;
        if (wv == 0.0 || v < 0 || v >= img.n) continue;
        for (int du = 0; du < 2; ++du) {
            int u = au.i0 + du;
            double wu = du ? au.w : 1.0 - au.w;
            if (wu == 0.0 || u < 0 || u >= img.n) continue;
            acc += wv * wu * img.at(v, u);
        }
    }
    return acc;
}

// Regrids a continuous image through the warp: out(x) = sampler(w(x)).
template <typename Sampler>
    requires std::is_invocable_r_v<double, Sampler, const Vec2&>
Image deform_image(Sampler&& sampler, const TiltDeformation& phi, int n) {
    Image out(n);
    for (int iv = 0; iv < n; ++iv) {
        double v = pixel_center(iv, n);
        for (int iu = 0; iu < n; ++iu) {
            Vec2 x{pixel_center(iu, n), v};
            out.at(iv, iu) = sampler(warp_coords(phi, x));
        }
    }
    return out;
}

inline Image deform_image(const Image& img, const TiltDeformation& phi) {
    return deform_image([&img](const Vec2& x) { return sample_image(img, x); }, phi, img.n);
}

// ---------------------------------------------------------------------------
// Ground-truth random deformations.
// ---------------------------------------------------------------------------

struct ElasticFieldConfig {
    int grid = 5;            // control grid size g x g
    double sigma_px = 0.0;   // Gaussian smoothing width in pixels; 0 -> n/8
    double max_px = 3.0;     // peak displacement magnitude in pixels
    std::uint64_t seed = 0;

    void validate() const {
        if (grid < 2) throw ConfigError("elastic field: control grid must be >= 2");
        if (max_px < 0) throw ConfigError("elastic field: max displacement must be >= 0");
    }
};

// Draws i.i.d. Gaussian control-point displacements, smooths them, bilinearly
// upsamples to the pixel grid and rescales so the peak norm is max_px pixels.
// Output displacements are stored in normalized units (pixels * 2/n).
inline DenseField sample_elastic_field(const ElasticFieldConfig& cfg, int n) {
    cfg.validate();
    const int g = cfg.grid;
    const double sigma_px = cfg.sigma_px > 0 ? cfg.sigma_px : n / 8.0;

    Rng rng(derive_seed(cfg.seed, 0xe1a));
    std::vector<double> ctrl(static_cast<std::size_t>(g) * g * 2);
    for (auto& v : ctrl) v = rng.normal();

    // Smooth on the control grid; sigma converted to control-cell units.
    const double sigma_ctrl = sigma_px * g / n;
    if (sigma_ctrl > 1e-9) {
        int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_ctrl)));
        std::vector<double> kernel(2 * radius + 1);
        for (int i = -radius; i <= radius; ++i)
            kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma_ctrl * sigma_ctrl));
        auto smooth_axis = [&](bool along_u) {
            std::vector<double> out(ctrl.size());
            for (int v = 0; v < g; ++v)
                for (int u = 0; u < g; ++u)
                    for (int comp = 0; comp < 2; ++comp) {
                        double acc = 0, wsum = 0;
                        for (int o = -radius; o <= radius; ++o) {
                            int uu = along_u ? u + o : u;
                            int vv = along_u ? v : v + o;
                            if (uu < 0 || uu >= g || vv < 0 || vv >= g) continue;
                            double w = kernel[o + radius];
                            acc += w * ctrl[(static_cast<std::size_t>(vv) * g + uu) * 2 + comp];
                            wsum += w;
                        }
                        out[(static_cast<std::size_t>(v) * g + u) * 2 + comp] = acc / wsum;
                    }
            ctrl = std::move(out);
        };
        smooth_axis(true);
        smooth_axis(false);
    }

    // Bilinear upsample: control points span the full pixel range.
    DenseField field(n);
    for (int v = 0; v < n; ++v) {
        double fv = g == 1 ? 0.0 : static_cast<double>(v) * (g - 1) / (n - 1);
        int v0 = std::min(static_cast<int>(fv), g - 2);
        double wv = fv - v0;
        for (int u = 0; u < n; ++u) {
            double fu = g == 1 ? 0.0 : static_cast<double>(u) * (g - 1) / (n - 1);
            int u0 = std::min(static_cast<int>(fu), g - 2);
            double wu = fu - u0;
            for (int comp = 0; comp < 2; ++comp) {
                auto c = [&](int vv, int uu) {
                    return ctrl[(static_cast<std::size_t>(vv) * g + uu) * 2 + comp];
                };
                field.at(v, u, comp) = (1 - wv) * ((1 - wu) * c(v0, u0) + wu * c(v0, u0 + 1)) +
                                       wv * ((1 - wu) * c(v0 + 1, u0) + wu * c(v0 + 1, u0 + 1));
            }
        }
    }

    double peak = field.max_norm();
    double scale = (peak > 0 && cfg.max_px > 0) ? (cfg.max_px * 2.0 / n) / peak : 0.0;
    for (auto& v : field.data) v *= scale;
    return field;
}

struct DeformationBounds {
    double shift_max_frac = 0.1;  // of the image size (2 normalized units)
    double rot_max_deg = 10.0;
};

// Independent per-tilt draws: elastic field + uniform shift + uniform
// in-plane rotation, each from its own seed stream.
inline DeformationSet sample_random_deformations(int m, const ElasticFieldConfig& cfg,
                                                 const DeformationBounds& bounds, int n,
                                                 std::uint64_t seed) {
    if (m < 1) throw ConfigError("sample_random_deformations: need at least one tilt");
    DeformationSet set;
    set.tilts.reserve(m);
    const double shift_max = bounds.shift_max_frac * 2.0;  // normalized units
    for (int i = 0; i < m; ++i) {
        ElasticFieldConfig fc = cfg;
        fc.seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(i));
        TiltDeformation t;
        t.local = LocalDisplacement::from_field(sample_elastic_field(fc, n));
        Rng rng(derive_seed(seed, 2000 + static_cast<std::uint64_t>(i)));
        t.tau = {rng.uniform(-shift_max, shift_max), rng.uniform(-shift_max, shift_max)};
        t.alpha_rad = deg2rad(rng.uniform(-bounds.rot_max_deg, bounds.rot_max_deg));
        set.tilts.push_back(std::move(t));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Ground-truth dump: per tilt (alpha, tau) plus the dense field.
// ---------------------------------------------------------------------------

inline void write_deformation_set(const DeformationSet& set, int n, std::ostream& os) {
    os.write("DTDF", 4);
    binio::put_u32(os, 1);
    binio::put_u32(os, static_cast<std::uint32_t>(set.count()));
    binio::put_u32(os, static_cast<std::uint32_t>(n));
    for (const auto& t : set.tilts) {
        binio::put_f64(os, t.alpha_deg());
        binio::put_f64(os, t.tau.x);
        binio::put_f64(os, t.tau.y);
        DenseField f = t.local.kind == LocalDisplacement::Kind::Field ? t.local.field
                                                                      : DenseField(n);
        if (f.n != n) throw ShapeError("deformation dump: field size mismatch");
        for (double v : f.data) binio::put_f64(os, v);
    }
}

inline DeformationSet read_deformation_set(std::istream& is) {
    char magic[4];
    if (!binio::get_bytes(is, magic, 4) || std::string(magic, 4) != "DTDF")
        throw IoError("deformation dump: bad magic");
    if (binio::get_u32(is, "version") != 1) throw IoError("deformation dump: unknown version");
    int m = static_cast<int>(binio::get_u32(is, "tilt count"));
    int n = static_cast<int>(binio::get_u32(is, "grid size"));
    DeformationSet set;
    set.tilts.reserve(m);
    for (int i = 0; i < m; ++i) {
        TiltDeformation t;
        t.alpha_rad = deg2rad(binio::get_f64(is, "alpha"));
        t.tau.x = binio::get_f64(is, "tau.x");
        t.tau.y = binio::get_f64(is, "tau.y");
        DenseField f(n);
        for (auto& v : f.data) v = binio::get_f64(is, "field");
        t.local = LocalDisplacement::from_field(std::move(f));
        set.tilts.push_back(std::move(t));
    }
    return set;
}

}  // namespace dtomo
