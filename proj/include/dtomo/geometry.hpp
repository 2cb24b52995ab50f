#pragma once

#include <cmath>
#include <type_traits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dtomo/common.hpp"
#include "dtomo/neural_field.hpp"

namespace dtomo {

// Conventions used everywhere: coordinates are normalized to [-1,1] per axis.
// The tilt axis is the detector's second axis (y). The beam travels along the
// detector z-axis; a detector pixel (u,v) sees the ray point
//   p(t) = R_{-theta} (u, v, t),  t in [-1, 1],
// i.e. the rotation is pulled back onto sample coordinates. Pixel centers sit
// at -1 + (i + 0.5) * 2/N, matching voxel centers of an N^3 grid.

struct TiltGeometry {
    std::vector<double> angles_deg;
    int detector_size = 0;  // N
    int ray_samples = 0;    // S, quadrature nodes per ray

    int tilt_count() const { return static_cast<int>(angles_deg.size()); }

    void validate() const {
        if (angles_deg.empty()) throw ConfigError("geometry: need at least one tilt angle");
        if (detector_size < 2) throw ConfigError("geometry: detector size must be >= 2");
        if (ray_samples < detector_size)
            throw ConfigError("geometry: ray sample count must be >= detector size");
        for (double a : angles_deg)
            if (!(a >= -90.0 && a < 90.0))
                throw ConfigError("geometry: tilt angles must lie in [-90, 90)");
    }

    // M angles uniformly spaced over [lo, hi], both endpoints included.
    static TiltGeometry uniform(int m, double lo_deg, double hi_deg, int n, int s) {
        TiltGeometry g;
        g.detector_size = n;
        g.ray_samples = s;
        g.angles_deg.resize(m);
        for (int i = 0; i < m; ++i)
            g.angles_deg[i] = m == 1 ? lo_deg : lo_deg + (hi_deg - lo_deg) * i / (m - 1);
        g.validate();
        return g;
    }
};

struct VolumeGrid {
    int n = 0;
    std::vector<double> data;  // index order (z, y, x), x fastest

    VolumeGrid() = default;
    explicit VolumeGrid(int n_) : n(n_), data(static_cast<std::size_t>(n_) * n_ * n_, 0.0) {}

    double& at(int z, int y, int x) {
        return data[(static_cast<std::size_t>(z) * n + y) * n + x];
    }
    double at(int z, int y, int x) const {
        return data[(static_cast<std::size_t>(z) * n + y) * n + x];
    }
    std::size_t size() const { return data.size(); }
};

struct Image {
    int n = 0;
    std::vector<double> data;  // row-major, (v, u), u fastest

    Image() = default;
    explicit Image(int n_) : n(n_), data(static_cast<std::size_t>(n_) * n_, 0.0) {}

    double& at(int v, int u) { return data[static_cast<std::size_t>(v) * n + u]; }
    double at(int v, int u) const { return data[static_cast<std::size_t>(v) * n + u]; }
};

struct TiltSeries {
    TiltGeometry geom;
    std::vector<Image> images;  // one per tilt angle
    std::map<std::string, std::string> meta;

    int tilt_count() const { return static_cast<int>(images.size()); }

    void validate() const {
        geom.validate();
        if (static_cast<int>(images.size()) != geom.tilt_count())
            throw ShapeError("tilt series: image count does not match angle count");
        for (const Image& im : images)
            if (im.n != geom.detector_size) throw ShapeError("tilt series: image size mismatch");
    }
};

inline double pixel_center(int i, int n) { return -1.0 + (i + 0.5) * 2.0 / n; }

// Right-handed rotation about the +y axis (counterclockwise looking down +y).
inline Vec3 rotate_coords_3d(const Vec3& p, double theta_deg) {
    double t = deg2rad(theta_deg);
    double c = std::cos(t), s = std::sin(t);
    return {p.x * c + p.z * s, p.y, -p.x * s + p.z * c};
}

namespace detail {

struct AxisInterp {
    int i0;
    double w;  // weight of node i0+1; node i0 has weight 1-w
};

// Continuous index with fractional weights snapped at exact-node alignment so
// integer-aligned lookups reproduce node values bit for bit.
inline AxisInterp axis_interp(int n, double c) {
    double f = (c + 1.0) * (0.5 * n) - 0.5;
    double fl = std::floor(f);
    int i0 = static_cast<int>(fl);
    double w = f - fl;
    if (w < 1e-12) {
        w = 0.0;
    } else if (w > 1.0 - 1e-12) {
        i0 += 1;
        w = 0.0;
    }
    return {i0, w};
}

}  // namespace detail

// Trilinear interpolation with zero padding outside [-1,1]^3.
inline double sample_grid(const VolumeGrid& vol, const Vec3& p) {
    const int n = vol.n;
    auto ax = detail::axis_interp(n, p.x);
    auto ay = detail::axis_interp(n, p.y);
    auto az = detail::axis_interp(n, p.z);
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        int z = az.i0 + dz;
        double wz = dz ? az.w : 1.0 - az.w;
        if (wz == 0.0 || z < 0 || z >= n) continue;
        for (int dy = 0; dy < 2; ++dy) {
            int y = ay.i0 + dy;
            double wy = dy ? ay.w : 1.0 - ay.w;
            if (wy == 0.0 || y < 0 || y >= n) continue;
            for (int dx = 0; dx < 2; ++dx) {
                int x = ax.i0 + dx;
                double wx = dx ? ax.w : 1.0 - ax.w;
                if (wx == 0.0 || x < 0 || x >= n) continue;
                acc += wz * wy * wx * vol.at(z, y, x);
            }
        }
    }
    return acc;
}

// Transpose of sample_grid: distributes `value` onto the 8 surrounding nodes
// with the same weights, so project/backproject form an exact adjoint pair.
inline void splat_grid(VolumeGrid& vol, const Vec3& p, double value) {
    const int n = vol.n;
    auto ax = detail::axis_interp(n, p.x);
    auto ay = detail::axis_interp(n, p.y);
    auto az = detail::axis_interp(n, p.z);
    for (int dz = 0; dz < 2; ++dz) {
        int z = az.i0 + dz;
        double wz = dz ? az.w : 1.0 - az.w;
        if (wz == 0.0 || z < 0 || z >= n) continue;
        for (int dy = 0; dy < 2; ++dy) {
            int y = ay.i0 + dy;
            double wy = dy ? ay.w : 1.0 - ay.w;
            if (wy == 0.0 || y < 0 || y >= n) continue;
            for (int dx = 0; dx < 2; ++dx) {
                int x = ax.i0 + dx;
                double wx = dx ? ax.w : 1.0 - ax.w;
                if (wx == 0.0 || x < 0 || x >= n) continue;
                vol.at(z, y, x) += wz * wy * wx * value;
            }
        }
    }
}

inline std::vector<double> sample_volume(const VolumeGrid& vol, std::span<const Vec3> pts) {
    std::vector<double> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = sample_grid(vol, pts[i]);
    return out;
}

inline std::vector<double> sample_volume(const NeuralVolume& nv, std::span<const Vec3> pts) {
    std::vector<double> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = nv.eval(pts[i]);
    return out;
}

// Midpoint-rule line integral along the beam for every detector pixel.
// `sampler` is any double(Vec3) density function.
template <typename Sampler>
    requires std::is_invocable_r_v<double, Sampler, const Vec3&>
Image project_tilt(Sampler&& sampler, double theta_deg, const TiltGeometry& geom) {
    const int n = geom.detector_size;
    const int s_count = geom.ray_samples;
    const double dt = 2.0 / s_count;
    const double th = deg2rad(theta_deg);
    const double c = std::cos(th), si = std::sin(th);

    Image img(n);
    for (int iv = 0; iv < n; ++iv) {
        double v = pixel_center(iv, n);
        for (int iu = 0; iu < n; ++iu) {
            double u = pixel_center(iu, n);
            // p(t) = (u cos - t sin, v, u sin + t cos)
            double ax = u * c, az = u * si;
            double acc = 0.0;
            for (int s = 0; s < s_count; ++s) {
                double t = -1.0 + (s + 0.5) * dt;
                acc += sampler(Vec3{ax - t * si, v, az + t * c});
            }
            img.at(iv, iu) = acc * dt;
        }
    }
    return img;
}

inline Image project_tilt(const VolumeGrid& vol, double theta_deg, const TiltGeometry& geom) {
    return project_tilt([&vol](const Vec3& p) { return sample_grid(vol, p); }, theta_deg, geom);
}

inline Image project_tilt(const NeuralVolume& nv, double theta_deg, const TiltGeometry& geom) {
    return project_tilt([&nv](const Vec3& p) { return nv.eval(p); }, theta_deg, geom);
}

// Exact adjoint of the grid-path projector under the discrete inner products.
inline VolumeGrid backproject(const TiltSeries& series, const TiltGeometry& geom) {
    if (static_cast<int>(series.images.size()) != geom.tilt_count())
        throw ShapeError("backproject: image count does not match geometry");
    const int n = geom.detector_size;
    const int s_count = geom.ray_samples;
    const double dt = 2.0 / s_count;

    VolumeGrid vol(n);
    for (int m = 0; m < geom.tilt_count(); ++m) {
        const double th = deg2rad(geom.angles_deg[m]);
        const double c = std::cos(th), si = std::sin(th);
        const Image& img = series.images[m];
        if (img.n != n) throw ShapeError("backproject: image size mismatch");
        for (int iv = 0; iv < n; ++iv) {
            double v = pixel_center(iv, n);
            for (int iu = 0; iu < n; ++iu) {
                double u = pixel_center(iu, n);
                double val = img.at(iv, iu) * dt;
                if (val == 0.0) continue;
                double ax = u * c, az = u * si;
                for (int s = 0; s < s_count; ++s) {
                    double t = -1.0 + (s + 0.5) * dt;
                    splat_grid(vol, Vec3{ax - t * si, v, az + t * c}, val);
                }
            }
        }
    }
    return vol;
}

}  // namespace dtomo
