#include <doctest.h>

#include <cmath>

#include "dtomo/metrics.hpp"
#include "dtomo/rng.hpp"
#include "dtomo/simulator.hpp"

using namespace dtomo;

namespace {

VolumeGrid random_volume(int n, std::uint64_t seed) {
    VolumeGrid v(n);
    Rng rng(seed);
    for (auto& x : v.data) x = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("snr_db") {
    const int n = 4096;
    Rng rng(1);
    std::vector<double> s_true(n);
    for (auto& v : s_true) v = rng.normal() * 2.0 + 0.5;
    double mean = 0;
    for (double v : s_true) mean += v;
    mean /= n;
    double var = 0;
    for (double v : s_true) var += (v - mean) * (v - mean);
    var /= n;

    SUBCASE("equal-power noise gives ~0 dB") {
        std::vector<double> s(n);
        Rng nrng(2);
        for (int i = 0; i < n; ++i) s[i] = s_true[i] + nrng.normal() * std::sqrt(var);
        CHECK(std::abs(snr_db(s, s_true)) < 0.2);
    }

    SUBCASE("identical signals give the +inf sentinel") {
        CHECK(std::isinf(snr_db(s_true, s_true)));
    }

    SUBCASE("tenth-power noise gives ~10 dB") {
        std::vector<double> s(n);
        Rng nrng(3);
        for (int i = 0; i < n; ++i) s[i] = s_true[i] + nrng.normal() * std::sqrt(var / 10.0);
        CHECK(snr_db(s, s_true) == doctest::Approx(10.0).epsilon(0.02));
    }

    SUBCASE("invariant to adding a common constant") {
        std::vector<double> s(n), s_shift(n), t_shift(n);
        Rng nrng(4);
        for (int i = 0; i < n; ++i) {
            s[i] = s_true[i] + nrng.normal();
            s_shift[i] = s[i] + 17.0;
            t_shift[i] = s_true[i] + 17.0;
        }
        CHECK(snr_db(s, s_true) == doctest::Approx(snr_db(s_shift, t_shift)).epsilon(1e-12));
    }

    SUBCASE("size mismatch is an error") {
        std::vector<double> small(3);
        CHECK_THROWS_AS(snr_db(small, s_true), ShapeError);
    }
}

TEST_CASE("fsc") {
    const int n = 32;
    VolumeGrid v = random_volume(n, 5);

    SUBCASE("identical volumes correlate to 1 in every shell") {
        FSCCurve c = fsc(v, v);
        CHECK(c.corr.size() == static_cast<std::size_t>(n / 2));
        for (double x : c.corr) CHECK(x == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("negated volume correlates to -1") {
        VolumeGrid neg(n);
        for (std::size_t i = 0; i < v.data.size(); ++i) neg.data[i] = -v.data[i];
        FSCCurve c = fsc(v, neg);
        for (double x : c.corr) CHECK(x == doctest::Approx(-1.0).epsilon(1e-9));
    }

    SUBCASE("independent noise decorrelates on populated shells") {
        const int big = 64;
        VolumeGrid a = random_volume(big, 100);
        VolumeGrid b = random_volume(big, 200);
        FSCCurve c = fsc(a, b);
        for (std::size_t s = 0; s < c.corr.size(); ++s)
            if (c.counts[s] >= 500) CHECK(std::abs(c.corr[s]) < 0.1);
    }

    SUBCASE("scale invariance") {
        VolumeGrid scaled(n);
        for (std::size_t i = 0; i < v.data.size(); ++i) scaled.data[i] = 3.7 * v.data[i];
        VolumeGrid other = random_volume(n, 7);
        FSCCurve c1 = fsc(v, other);
        FSCCurve c2 = fsc(scaled, other);
        for (std::size_t s = 0; s < c1.corr.size(); ++s)
            CHECK(c1.corr[s] == doctest::Approx(c2.corr[s]).epsilon(1e-9));
    }

    SUBCASE("size mismatch is an error") {
        VolumeGrid small(8);
        CHECK_THROWS_AS(fsc(v, small), ShapeError);
    }
}

TEST_CASE("resolution_at_threshold") {
    FSCCurve c;
    const int shells = 10;
    for (int i = 0; i < shells; ++i) {
        c.freq.push_back(i / 2.0);
        c.corr.push_back(1.0 - i / static_cast<double>(shells - 1));  // 1 -> 0 linearly
        c.counts.push_back(100);
        c.degenerate.push_back(false);
    }

    SUBCASE("linear curve crosses t=0.5 midway") {
        double f = resolution_at_threshold(c, 0.5);
        // corr(i) = 1 - i/9 crosses 0.5 at i = 4.5 -> freq = 2.25
        CHECK(f == doctest::Approx(2.25));
    }

    SUBCASE("lower threshold crosses later") {
        CHECK(resolution_at_threshold(c, 0.143) > resolution_at_threshold(c, 0.5));
    }

    SUBCASE("never-crossing curve returns the sentinel") {
        FSCCurve flat;
        for (int i = 0; i < 5; ++i) {
            flat.freq.push_back(i / 2.0);
            flat.corr.push_back(1.0);
            flat.counts.push_back(10);
            flat.degenerate.push_back(false);
        }
        CHECK(std::isinf(resolution_at_threshold(flat, 0.5)));
    }

    SUBCASE("threshold domain is validated") {
        CHECK_THROWS_AS(resolution_at_threshold(c, 0.0), ConfigError);
        CHECK_THROWS_AS(resolution_at_threshold(c, 1.0), ConfigError);
    }
}

TEST_CASE("deformation_errors") {
    const int n = 16, m = 4;
    DeformationSet truth = sample_random_deformations(m, ElasticFieldConfig{4, 0.0, 2.0, 0},
                                                      DeformationBounds{}, n, 42);

    SUBCASE("truth against itself is exactly zero") {
        DeformErrors e = deformation_errors(truth, truth, n);
        CHECK(e.shift_px == 0.0);
        CHECK(e.rot_deg == 0.0);
        CHECK(e.local_px == 0.0);
        CHECK(e.warp_px == 0.0);
    }

    SUBCASE("identity estimates report raw deformation magnitudes") {
        DeformationSet id = DeformationSet::identity(m);
        DeformErrors e = deformation_errors(truth, id, n);
        double shift = 0, rot = 0;
        for (const auto& t : truth.tilts) {
            shift += t.tau.norm() * n / 2.0;
            rot += std::abs(t.alpha_deg());
        }
        CHECK(e.shift_px == doctest::Approx(shift / m).epsilon(1e-12));
        CHECK(e.rot_deg == doctest::Approx(rot / m).epsilon(1e-12));
        CHECK(e.local_px > 0.0);
    }

    SUBCASE("symmetric under tilt relabeling") {
        DeformationSet est = sample_random_deformations(m, ElasticFieldConfig{4, 0.0, 1.0, 1},
                                                        DeformationBounds{}, n, 43);
        DeformErrors e1 = deformation_errors(truth, est, n);
        DeformationSet truth_p, est_p;
        for (int i = m - 1; i >= 0; --i) {
            truth_p.tilts.push_back(truth.tilts[i]);
            est_p.tilts.push_back(est.tilts[i]);
        }
        DeformErrors e2 = deformation_errors(truth_p, est_p, n);
        CHECK(e1.shift_px == doctest::Approx(e2.shift_px).epsilon(1e-12));
        CHECK(e1.rot_deg == doctest::Approx(e2.rot_deg).epsilon(1e-12));
        CHECK(e1.local_px == doctest::Approx(e2.local_px).epsilon(1e-12));
        CHECK(e1.warp_px == doctest::Approx(e2.warp_px).epsilon(1e-12));
    }

    SUBCASE("composed warp error obeys the pointwise triangle bound") {
        DeformationSet est = sample_random_deformations(m, ElasticFieldConfig{4, 0.0, 1.5, 2},
                                                        DeformationBounds{}, n, 44);
        for (int i = 0; i < m; ++i) {
            const auto& t = truth.tilts[i];
            const auto& g = est.tilts[i];
            for (int iv = 0; iv < n; iv += 3)
                for (int iu = 0; iu < n; iu += 3) {
                    Vec2 x{pixel_center(iu, n), pixel_center(iv, n)};
                    Vec2 wt = warp_coords(t, x);
                    Vec2 wg = warp_coords(g, x);
                    double lhs = (wg - wt).norm();
                    Vec2 qg = x + g.local.eval(x) + g.tau;
                    double dalpha = std::abs(g.alpha_rad - t.alpha_rad);
                    double rot_bound = 2.0 * std::abs(std::sin(dalpha / 2.0)) * qg.norm();
                    double rhs = rot_bound + (g.local.eval(x) - t.local.eval(x)).norm() +
                                 (g.tau - t.tau).norm();
                    CHECK(lhs <= rhs + 1e-12);
                }
        }
    }

    SUBCASE("count mismatch is an error") {
        CHECK_THROWS_AS(deformation_errors(truth, DeformationSet::identity(m - 1), n),
                        ShapeError);
    }
}

TEST_CASE("register_volumes") {
    const int n = 24;
    VolumeGrid v = generate_phantom(n, PhantomKind::GaussianBlobs, 13, 5);

    SUBCASE("identical volumes need no shift") {
        Registration r = register_volumes(v, v);
        CHECK(r.shift[0] == 0);
        CHECK(r.shift[1] == 0);
        CHECK(r.shift[2] == 0);
        CHECK(r.ncc == doctest::Approx(1.0).epsilon(1e-12));
    }

    SUBCASE("constructed 2-voxel x-shift is recovered") {
        // shifted(x) = v(x - 2) i.e. content moved +2 along x
        VolumeGrid shifted(n);
        for (int z = 0; z < n; ++z)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    if (x >= 2) shifted.at(z, y, x) = v.at(z, y, x - 2);
        Registration r = register_volumes(shifted, v);
        CHECK(r.shift[0] == -2);
        CHECK(r.shift[1] == 0);
        CHECK(r.shift[2] == 0);
        // applying the shift restores alignment
        CHECK(ncc(r.shifted, v) > 0.999);
    }

    SUBCASE("registration never reduces correlation") {
        VolumeGrid other = generate_phantom(n, PhantomKind::GaussianBlobs, 14, 5);
        Registration r = register_volumes(other, v);
        CHECK(r.ncc >= ncc(other, v) - 1e-12);
    }
}
