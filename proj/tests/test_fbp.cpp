#include <doctest.h>

#include <cmath>

#include "dtomo/fbp.hpp"
#include "dtomo/fft.hpp"
#include "dtomo/metrics.hpp"
#include "dtomo/rng.hpp"
#include "dtomo/simulator.hpp"

using namespace dtomo;

TEST_CASE("fft roundtrip and correctness") {
    SUBCASE("roundtrip, power of two and Bluestein sizes") {
        for (int n : {8, 16, 12, 17}) {
            Rng rng(n);
            std::vector<cdouble> a(n);
            for (auto& v : a) v = cdouble(rng.normal(), rng.normal());
            auto b = a;
            fft(b, false);
            fft(b, true);
            for (int i = 0; i < n; ++i) {
                CHECK(std::abs(b[i].real() - a[i].real()) < 1e-10);
                CHECK(std::abs(b[i].imag() - a[i].imag()) < 1e-10);
            }
        }
    }

    SUBCASE("matches the naive DFT") {
        const int n = 12;
        Rng rng(3);
        std::vector<cdouble> a(n);
        for (auto& v : a) v = cdouble(rng.normal(), rng.normal());
        auto b = a;
        fft(b, false);
        for (int k = 0; k < n; ++k) {
            cdouble acc{0, 0};
            for (int j = 0; j < n; ++j) {
                double ang = -2.0 * kPi * k * j / n;
                acc += a[j] * cdouble(std::cos(ang), std::sin(ang));
            }
            CHECK(std::abs(b[k] - acc) < 1e-9);
        }
    }
}

TEST_CASE("ramp_filter spectral behavior") {
    const int n = 16;
    const double du = 2.0 / n;

    SUBCASE("constant rows vanish (DC killed)") {
        std::vector<std::vector<double>> rows{std::vector<double>(n, 3.7)};
        ramp_filter(rows, FilterSpec{FilterSpec::Kind::RamLak, 1.0}, du);
        for (double v : rows[0]) CHECK(std::abs(v) < 1e-12);
    }

    SUBCASE("pure Nyquist cosine scales by the maximal ramp weight") {
        std::vector<std::vector<double>> rows{std::vector<double>(n)};
        for (int i = 0; i < n; ++i) rows[0][i] = (i % 2 == 0) ? 1.0 : -1.0;  // cos(pi i)
        auto orig = rows[0];
        ramp_filter(rows, FilterSpec{FilterSpec::Kind::RamLak, 1.0}, du);
        const double f_nyq = 1.0 / (2.0 * du);
        for (int i = 0; i < n; ++i) CHECK(rows[0][i] == doctest::Approx(f_nyq * orig[i]));
    }

    SUBCASE("linearity") {
        Rng rng(5);
        std::vector<double> r1(n), r2(n);
        for (int i = 0; i < n; ++i) {
            r1[i] = rng.normal();
            r2[i] = rng.normal();
        }
        const double a = 1.3, b = -2.1;
        std::vector<double> mix(n);
        for (int i = 0; i < n; ++i) mix[i] = a * r1[i] + b * r2[i];
        std::vector<std::vector<double>> rows{r1, r2, mix};
        ramp_filter(rows, FilterSpec{}, du);
        for (int i = 0; i < n; ++i)
            CHECK(rows[2][i] == doctest::Approx(a * rows[0][i] + b * rows[1][i]).epsilon(1e-10));
    }

    SUBCASE("cutoff must be in (0,1]") {
        std::vector<std::vector<double>> rows{std::vector<double>(n, 1.0)};
        CHECK_THROWS_AS(ramp_filter(rows, FilterSpec{FilterSpec::Kind::Hann, 0.0}, du), ConfigError);
        CHECK_THROWS_AS(ramp_filter(rows, FilterSpec{FilterSpec::Kind::Hann, 1.5}, du), ConfigError);
    }
}

namespace {

SimulationBundle blob_bundle(int n, int m, double lo, double hi, bool deformed,
                             std::uint64_t seed) {
    VolumeGrid phantom = generate_phantom(n, PhantomKind::GaussianBlobs, seed, 6);
    TiltGeometry geom = TiltGeometry::uniform(m, lo, hi, n, 2 * n);
    DeformationSet defs = deformed
        ? sample_random_deformations(m, ElasticFieldConfig{5, 0.0, 3.0, 0}, DeformationBounds{},
                                     n, seed + 1)
        : DeformationSet::identity(m);
    return synthesize_tilt_series(phantom, geom, defs, NoiseModel::off());
}

}  // namespace

TEST_CASE("fbp_reconstruct basics") {
    SUBCASE("zero series reconstructs to zero") {
        const int n = 16, m = 9;
        TiltSeries s;
        s.geom = TiltGeometry::uniform(m, -70, 70, n, 2 * n);
        s.images.assign(m, Image(n));
        VolumeGrid v = fbp_reconstruct(s, FilterSpec{});
        for (double x : v.data) CHECK(std::abs(x) < 1e-12);
    }

    SUBCASE("linearity in the input series") {
        const int n = 12, m = 7;
        TiltGeometry geom = TiltGeometry::uniform(m, -60, 60, n, 2 * n);
        Rng rng(8);
        TiltSeries s1, s2, mix;
        s1.geom = s2.geom = mix.geom = geom;
        const double a = 0.7, b = -1.9;
        for (int i = 0; i < m; ++i) {
            Image i1(n), i2(n), im(n);
            for (int p = 0; p < n * n; ++p) {
                i1.data[p] = rng.normal();
                i2.data[p] = rng.normal();
                im.data[p] = a * i1.data[p] + b * i2.data[p];
            }
            s1.images.push_back(i1);
            s2.images.push_back(i2);
            mix.images.push_back(im);
        }
        VolumeGrid v1 = fbp_reconstruct(s1, FilterSpec{});
        VolumeGrid v2 = fbp_reconstruct(s2, FilterSpec{});
        VolumeGrid vm = fbp_reconstruct(mix, FilterSpec{});
        for (std::size_t i = 0; i < vm.data.size(); ++i)
            CHECK(vm.data[i] == doctest::Approx(a * v1.data[i] + b * v2.data[i]).epsilon(1e-9));
    }

    SUBCASE("full-range blob oracle: NCC >= 0.9") {
        const int n = 32, m = 60;
        auto bundle = blob_bundle(n, m, -90.0, 90.0 - 180.0 / m, false, 42);
        VolumeGrid rec = fbp_reconstruct(bundle.observed, FilterSpec{});
        CHECK(ncc(rec, bundle.phantom) >= 0.9);
    }

    SUBCASE("missing wedge degrades correlation") {
        const int n = 24, m = 40;
        auto full = blob_bundle(n, m, -90.0, 90.0 - 180.0 / m, false, 7);
        auto wedge = blob_bundle(n, m, -70.0, 70.0, false, 7);
        double c_full = ncc(fbp_reconstruct(full.observed, FilterSpec{}), full.phantom);
        double c_wedge = ncc(fbp_reconstruct(wedge.observed, FilterSpec{}), wedge.phantom);
        CHECK(c_full > c_wedge);
    }

    SUBCASE("deformations degrade FBP") {
        const int n = 24, m = 40;
        auto clean = blob_bundle(n, m, -70.0, 70.0, false, 9);
        auto deformed = blob_bundle(n, m, -70.0, 70.0, true, 9);
        double c_clean = ncc(fbp_reconstruct(clean.observed, FilterSpec{}), clean.phantom);
        double c_def = ncc(fbp_reconstruct(deformed.observed, FilterSpec{}), deformed.phantom);
        CHECK(c_clean > c_def);
    }
}
