#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dtomo/common.hpp"
#include "dtomo/deformation.hpp"
#include "dtomo/geometry.hpp"
#include "dtomo/io.hpp"
#include "dtomo/rng.hpp"

namespace dtomo {

// ---------------------------------------------------------------------------
// Phantoms. All phantoms are nonnegative with compact support strictly inside
// [-0.9, 0.9]^3; the margin keeps rotated support inside the sampled slab.
// ---------------------------------------------------------------------------

enum class PhantomKind { GaussianBlobs, SheppLogan3d, FromMrc };

inline PhantomKind parse_phantom_kind(const std::string& s) {
    if (s == "gaussian-blobs") return PhantomKind::GaussianBlobs;
    if (s == "shepp-logan-3d") return PhantomKind::SheppLogan3d;
    if (s == "from-mrc") return PhantomKind::FromMrc;
    throw ConfigError("unknown phantom kind: " + s);
}

struct GaussianBlob {
    Vec3 center;
    double sigma = 0.1;
    double amp = 1.0;
};

// Blob draws are constrained so center + 3.5 sigma stays inside a 0.85-radius
// ball; support is then rotation-invariant.
inline std::vector<GaussianBlob> sample_blobs(int count, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xb10b));
    std::vector<GaussianBlob> blobs;
    blobs.reserve(count);
    for (int i = 0; i < count; ++i) {
        GaussianBlob b;
        b.sigma = rng.uniform(0.05, 0.16);
        double max_r = 0.85 - 3.5 * b.sigma;
        for (;;) {
            Vec3 c{rng.uniform(-max_r, max_r), rng.uniform(-max_r, max_r),
                   rng.uniform(-max_r, max_r)};
            if (c.norm() <= max_r) {
                b.center = c;
                break;
            }
        }
        b.amp = rng.uniform(0.4, 1.0);
        blobs.push_back(b);
    }
    return blobs;
}

inline double blob_density(const std::vector<GaussianBlob>& blobs, const Vec3& p) {
    double acc = 0.0;
    for (const auto& b : blobs) {
        Vec3 d = p - b.center;
        acc += b.amp * std::exp(-d.dot(d) / (2.0 * b.sigma * b.sigma));
    }
    return acc;
}

// Closed-form line integral of the blob sum along p(t) = origin + t * dir
// (unit dir, integrated over the whole line). Oracle for quadrature tests.
inline double blob_line_integral(const std::vector<GaussianBlob>& blobs, const Vec3& origin,
                                 const Vec3& dir) {
    double acc = 0.0;
    for (const auto& b : blobs) {
        Vec3 rel = origin - b.center;
        double along = rel.dot(dir);
        double perp2 = rel.dot(rel) - along * along;
        acc += b.amp * b.sigma * std::sqrt(2.0 * kPi) * std::exp(-perp2 / (2.0 * b.sigma * b.sigma));
    }
    return acc;
}

namespace detail {

struct Ellipsoid {
    double amp, a, b, c, x0, y0, z0, phi_deg;
};

// Modified 3D Shepp-Logan table (phantom scaled by 0.9 at evaluation).
inline const std::vector<Ellipsoid>& shepp_logan_table() {
    static const std::vector<Ellipsoid> t = {
        {1.0, 0.69, 0.92, 0.81, 0, 0, 0, 0},
        {-0.8, 0.6624, 0.874, 0.78, 0, -0.0184, 0, 0},
        {-0.2, 0.11, 0.31, 0.22, 0.22, 0, 0, -18},
        {-0.2, 0.16, 0.41, 0.28, -0.22, 0, 0, 18},
        {0.1, 0.21, 0.25, 0.41, 0, 0.35, -0.15, 0},
        {0.1, 0.046, 0.046, 0.05, 0, 0.1, 0.25, 0},
        {0.1, 0.046, 0.046, 0.05, 0, -0.1, 0.25, 0},
        {0.1, 0.046, 0.023, 0.05, -0.08, -0.605, 0, 0},
        {0.1, 0.023, 0.023, 0.02, 0, -0.606, 0, 0},
        {0.1, 0.023, 0.046, 0.02, 0.06, -0.605, 0, 0},
    };
    return t;
}

inline double shepp_logan_density(const Vec3& p) {
    const double s = 1.0 / 0.9;
    double x = p.x * s, y = p.y * s, z = p.z * s;
    double acc = 0.0;
    for (const auto& e : shepp_logan_table()) {
        double ph = deg2rad(e.phi_deg);
        double c = std::cos(ph), sn = std::sin(ph);
        double xr = (x - e.x0) * c + (y - e.y0) * sn;
        double yr = -(x - e.x0) * sn + (y - e.y0) * c;
        double zr = z - e.z0;
        double q = (xr / e.a) * (xr / e.a) + (yr / e.b) * (yr / e.b) + (zr / e.c) * (zr / e.c);
        if (q <= 1.0) acc += e.amp;
    }
    return std::max(0.0, acc);
}

inline void apply_support_margin(VolumeGrid& vol) {
    const int n = vol.n;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double cx = pixel_center(x, n), cy = pixel_center(y, n), cz = pixel_center(z, n);
                if (std::abs(cx) >= 0.9 || std::abs(cy) >= 0.9 || std::abs(cz) >= 0.9)
                    vol.at(z, y, x) = 0.0;
            }
}

}  // namespace detail

inline VolumeGrid generate_phantom(int n, PhantomKind kind, std::uint64_t seed,
                                   int blob_count = 12, const std::string& mrc_path = "") {
    if (n < 4) throw ConfigError("phantom: grid size must be >= 4");
    VolumeGrid vol(n);
    switch (kind) {
        case PhantomKind::GaussianBlobs: {
            auto blobs = sample_blobs(blob_count, seed);
            for (int z = 0; z < n; ++z)
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x)
                        vol.at(z, y, x) = blob_density(
                            blobs, {pixel_center(x, n), pixel_center(y, n), pixel_center(z, n)});
            break;
        }
        case PhantomKind::SheppLogan3d: {
            for (int z = 0; z < n; ++z)
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x)
                        vol.at(z, y, x) = detail::shepp_logan_density(
                            {pixel_center(x, n), pixel_center(y, n), pixel_center(z, n)});
            break;
        }
        case PhantomKind::FromMrc: {
            if (mrc_path.empty()) throw ConfigError("phantom from-mrc: no path given");
            VolumeGrid src = mrc_to_volume(read_mrc(mrc_path));
            if (src.n == n) {
                vol = src;
            } else {
                // trilinear resample onto the requested grid
                for (int z = 0; z < n; ++z)
                    for (int y = 0; y < n; ++y)
                        for (int x = 0; x < n; ++x)
                            vol.at(z, y, x) = sample_grid(
                                src,
                                {pixel_center(x, n), pixel_center(y, n), pixel_center(z, n)});
            }
            for (auto& v : vol.data) v = std::max(0.0, v);
            break;
        }
    }
    detail::apply_support_margin(vol);
    return vol;
}

// ---------------------------------------------------------------------------
// Noise.
// ---------------------------------------------------------------------------

struct NoiseModel {
    double snr_db = 0.0;
    std::uint64_t seed = 0;
    bool enabled = true;  // disabled = the +inf SNR sentinel

    static NoiseModel off() { return {0.0, 0, false}; }
};

// Adds zero-mean Gaussian noise calibrated per image so the realized noise
// variance is exactly Var(clean) * 10^(-snr/10). The draw is i.i.d. Gaussian,
// then recentered/rescaled to hit the target variance on this image.
inline std::vector<Image> add_noise_to_snr(const std::vector<Image>& images, double snr_db,
                                           std::uint64_t seed) {
    if (std::isinf(snr_db) && snr_db > 0) return images;
    std::vector<Image> out;
    out.reserve(images.size());
    for (std::size_t m = 0; m < images.size(); ++m) {
        const Image& img = images[m];
        const std::size_t count = img.data.size();
        double mean = 0;
        for (double v : img.data) mean += v;
        mean /= count;
        double var = 0;
        for (double v : img.data) var += (v - mean) * (v - mean);
        var /= count;
        if (var <= 0.0)
            throw NumericsError("add_noise_to_snr: image " + std::to_string(m) +
                                " has zero variance, cannot calibrate finite SNR");
        const double target_sd = std::sqrt(var * std::pow(10.0, -snr_db / 10.0));

        Rng rng(derive_seed(seed, 0x4015e + m));
        std::vector<double> noise(count);
        double nmean = 0;
        for (auto& v : noise) {
            v = rng.normal();
            nmean += v;
        }
        nmean /= count;
        double nvar = 0;
        for (auto& v : noise) {
            v -= nmean;
            nvar += v * v;
        }
        nvar /= count;
        const double scale = nvar > 0 ? target_sd / std::sqrt(nvar) : 0.0;

        Image noisy(img.n);
        for (std::size_t i = 0; i < count; ++i) noisy.data[i] = img.data[i] + noise[i] * scale;
        out.push_back(std::move(noisy));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward synthesis: y_m = D_m(P(R_theta_m(rho))) + eps_m.
// ---------------------------------------------------------------------------

struct SimulationBundle {
    TiltSeries observed;        // deformed + noisy
    TiltSeries clean;           // projections only
    TiltSeries deformed_clean;  // deformed, pre-noise
    DeformationSet truth;
    VolumeGrid phantom;
};

inline SimulationBundle synthesize_tilt_series(const VolumeGrid& vol, const TiltGeometry& geom,
                                               const DeformationSet& deformations,
                                               const NoiseModel& noise) {
    geom.validate();
    const int m = geom.tilt_count();
    if (deformations.count() != m)
        throw ShapeError("synthesize: deformation count does not match tilt count");

    SimulationBundle bundle;
    bundle.phantom = vol;
    bundle.truth = deformations;
    bundle.clean.geom = geom;
    bundle.deformed_clean.geom = geom;
    bundle.observed.geom = geom;

    for (int i = 0; i < m; ++i) {
        Image proj = project_tilt(vol, geom.angles_deg[i], geom);
        Image deformed = deform_image(proj, deformations.tilts[i]);
        bundle.clean.images.push_back(std::move(proj));
        bundle.deformed_clean.images.push_back(std::move(deformed));
    }
    if (noise.enabled) {
        bundle.observed.images =
            add_noise_to_snr(bundle.deformed_clean.images, noise.snr_db, noise.seed);
    } else {
        bundle.observed.images = bundle.deformed_clean.images;
    }
    return bundle;
}

}  // namespace dtomo
