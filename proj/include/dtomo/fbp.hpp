#pragma once

#include <cmath>
#include <vector>

#include "dtomo/common.hpp"
#include "dtomo/fft.hpp"
#include "dtomo/geometry.hpp"

namespace dtomo {

// Filtered back-projection baseline. The tilt axis is y, so the volume
// decomposes into independent (x,z) slices; each slice is a classical 2D
// parallel-beam problem over the acquired angular range. Deformations are
// ignored by construction.

struct FilterSpec {
    enum class Kind { RamLak, Hann } kind = Kind::Hann;
    double cutoff = 1.0;  // fraction of Nyquist

    void validate() const {
        if (!(cutoff > 0.0 && cutoff <= 1.0))
            throw ConfigError("filter: cutoff must be in (0, 1]");
    }
};

// Per-row ramp filtering: DFT, multiply by |f| (optionally Hann-windowed),
// inverse DFT, keep the real part. Circular (no padding) so single-bin
// spectral inputs map exactly. `du` is the detector sample spacing.
inline void ramp_filter(std::vector<std::vector<double>>& rows, const FilterSpec& spec,
                        double du) {
    spec.validate();
    if (rows.empty()) return;
    const std::size_t len = rows[0].size();
    const double f_nyq = 1.0 / (2.0 * du);
    const double f_cut = spec.cutoff * f_nyq;

    std::vector<double> weight(len);
    for (std::size_t k = 0; k < len; ++k) {
        double signed_k = k <= len / 2 ? static_cast<double>(k)
                                       : static_cast<double>(k) - static_cast<double>(len);
        double f = std::abs(signed_k) / (static_cast<double>(len) * du);
        if (f > f_cut + 1e-12) {
            weight[k] = 0.0;
        } else if (spec.kind == FilterSpec::Kind::Hann) {
            weight[k] = f * 0.5 * (1.0 + std::cos(kPi * f / f_cut));
        } else {
            weight[k] = f;
        }
    }

    std::vector<cdouble> spec_line(len);
    for (auto& row : rows) {
        if (row.size() != len) throw ShapeError("ramp_filter: ragged rows");
        for (std::size_t k = 0; k < len; ++k) spec_line[k] = cdouble(row[k], 0.0);
        fft(spec_line, false);
        for (std::size_t k = 0; k < len; ++k) spec_line[k] *= weight[k];
        fft(spec_line, true);
        for (std::size_t k = 0; k < len; ++k) row[k] = spec_line[k].real();
    }
}

inline VolumeGrid fbp_reconstruct(const TiltSeries& series, const FilterSpec& spec) {
    series.validate();
    spec.validate();
    const TiltGeometry& geom = series.geom;
    const int n = geom.detector_size;
    const int m = geom.tilt_count();
    const double du = 2.0 / n;
    const double weight = kPi / (2.0 * m);

    // Zero-pad rows to suppress circular wrap from the filter.
    std::size_t padded = 1;
    while (padded < static_cast<std::size_t>(2 * n)) padded <<= 1;
    const int pad0 = static_cast<int>((padded - static_cast<std::size_t>(n)) / 2);

    std::vector<double> cs(m), sn(m);
    for (int i = 0; i < m; ++i) {
        double th = deg2rad(geom.angles_deg[i]);
        cs[i] = std::cos(th);
        sn[i] = std::sin(th);
    }

    VolumeGrid vol(n);
    std::vector<std::vector<double>> rows(m, std::vector<double>(padded, 0.0));
    for (int iv = 0; iv < n; ++iv) {
        for (int i = 0; i < m; ++i) {
            auto& row = rows[i];
            std::fill(row.begin(), row.end(), 0.0);
            for (int iu = 0; iu < n; ++iu) row[pad0 + iu] = series.images[i].at(iv, iu);
        }
        ramp_filter(rows, spec, du);

        for (int iz = 0; iz < n; ++iz) {
            double z = pixel_center(iz, n);
            for (int ix = 0; ix < n; ++ix) {
                double x = pixel_center(ix, n);
                double acc = 0.0;
                for (int i = 0; i < m; ++i) {
                    double u = x * cs[i] + z * sn[i];
                    double fu = (u + 1.0) * (0.5 * n) - 0.5 + pad0;
                    int i0 = static_cast<int>(std::floor(fu));
                    double w = fu - i0;
                    double v0 = (i0 >= 0 && i0 < static_cast<int>(padded)) ? rows[i][i0] : 0.0;
                    double v1 = (i0 + 1 >= 0 && i0 + 1 < static_cast<int>(padded)) ? rows[i][i0 + 1]
                                                                                   : 0.0;
                    acc += (1.0 - w) * v0 + w * v1;
                }
                vol.at(iz, iv, ix) = acc * weight;
            }
        }
    }
    return vol;
}

}  // namespace dtomo
