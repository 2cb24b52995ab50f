#include <doctest.h>

#include <cmath>

#include "dtomo/metrics.hpp"
#include "dtomo/rng.hpp"
#include "dtomo/simulator.hpp"

using namespace dtomo;

TEST_CASE("phantom generation") {
    SUBCASE("gaussian blobs are deterministic, nonnegative, margin-respecting") {
        VolumeGrid a = generate_phantom(32, PhantomKind::GaussianBlobs, 11);
        VolumeGrid b = generate_phantom(32, PhantomKind::GaussianBlobs, 11);
        CHECK(a.data == b.data);
        VolumeGrid c = generate_phantom(32, PhantomKind::GaussianBlobs, 12);
        CHECK(a.data != c.data);

        const int n = 32;
        for (int z = 0; z < n; ++z)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    CHECK(a.at(z, y, x) >= 0.0);
                    double cx = pixel_center(x, n), cy = pixel_center(y, n),
                           cz = pixel_center(z, n);
                    if (std::abs(cx) >= 0.9 || std::abs(cy) >= 0.9 || std::abs(cz) >= 0.9)
                        CHECK(a.at(z, y, x) == 0.0);
                }
    }

    SUBCASE("shepp-logan is nonnegative with margin") {
        VolumeGrid v = generate_phantom(24, PhantomKind::SheppLogan3d, 0);
        double total = 0;
        for (double x : v.data) {
            CHECK(x >= 0.0);
            total += x;
        }
        CHECK(total > 0.0);
    }

    SUBCASE("blob projection matches the analytic line integral within 1%") {
        const int n = 64;
        auto blobs = sample_blobs(6, 11);
        TiltGeometry geom = TiltGeometry::uniform(1, 0, 0, n, 2 * n);
        auto sampler = [&](const Vec3& p) { return blob_density(blobs, p); };
        Image img = project_tilt(sampler, 0.0, geom);
        // central ray: pixel centers near the origin
        for (int iv : {n / 2 - 1, n / 2}) {
            for (int iu : {n / 2 - 1, n / 2}) {
                Vec3 origin{pixel_center(iu, n), pixel_center(iv, n), 0.0};
                double analytic = blob_line_integral(blobs, origin, {0, 0, 1});
                CHECK(img.at(iv, iu) == doctest::Approx(analytic).epsilon(0.01));
            }
        }
    }

    SUBCASE("from-mrc with a missing file is an error") {
        CHECK_THROWS_AS(generate_phantom(16, PhantomKind::FromMrc, 0, 12, "/nonexistent.mrc"),
                        IoError);
    }
}

TEST_CASE("noise calibration") {
    const int n = 32;
    VolumeGrid phantom = generate_phantom(n, PhantomKind::GaussianBlobs, 3, 6);
    TiltGeometry geom = TiltGeometry::uniform(5, -60, 60, n, 2 * n);
    std::vector<Image> clean;
    for (double th : geom.angles_deg) clean.push_back(project_tilt(phantom, th, geom));

    SUBCASE("snr 0 dB: noise variance equals image variance") {
        auto noisy = add_noise_to_snr(clean, 0.0, 77);
        for (std::size_t m = 0; m < clean.size(); ++m) {
            double var_clean = 0, var_noise = 0, mc = 0, mn = 0;
            const std::size_t cnt = clean[m].data.size();
            for (std::size_t i = 0; i < cnt; ++i) {
                mc += clean[m].data[i];
                mn += noisy[m].data[i] - clean[m].data[i];
            }
            mc /= cnt;
            mn /= cnt;
            for (std::size_t i = 0; i < cnt; ++i) {
                double dc = clean[m].data[i] - mc;
                double dn = (noisy[m].data[i] - clean[m].data[i]) - mn;
                var_clean += dc * dc;
                var_noise += dn * dn;
            }
            CHECK(var_noise / var_clean == doctest::Approx(1.0).epsilon(0.05));
            CHECK(snr_db(noisy[m], clean[m]) == doctest::Approx(0.0).epsilon(1e-6));
        }
    }

    SUBCASE("snr 10 dB: noise variance is a tenth") {
        auto noisy = add_noise_to_snr(clean, 10.0, 77);
        for (std::size_t m = 0; m < clean.size(); ++m)
            CHECK(snr_db(noisy[m], clean[m]) == doctest::Approx(10.0).epsilon(1e-6));
    }

    SUBCASE("infinite-SNR sentinel leaves images unchanged") {
        auto noisy = add_noise_to_snr(clean, std::numeric_limits<double>::infinity(), 77);
        for (std::size_t m = 0; m < clean.size(); ++m) CHECK(noisy[m].data == clean[m].data);
    }

    SUBCASE("zero-variance image with finite target is an error") {
        std::vector<Image> flat{Image(8)};
        CHECK_THROWS_AS(add_noise_to_snr(flat, 0.0, 1), NumericsError);
    }
}

TEST_CASE("tilt series synthesis") {
    const int n = 24, m = 9;
    VolumeGrid phantom = generate_phantom(n, PhantomKind::GaussianBlobs, 5, 5);
    TiltGeometry geom = TiltGeometry::uniform(m, -70, 70, n, 2 * n);

    SUBCASE("identity deformations and no noise reproduce pure projections") {
        auto bundle = synthesize_tilt_series(phantom, geom, DeformationSet::identity(m),
                                             NoiseModel::off());
        for (int i = 0; i < m; ++i) {
            Image direct = project_tilt(phantom, geom.angles_deg[i], geom);
            CHECK(bundle.observed.images[i].data == direct.data);
            CHECK(bundle.clean.images[i].data == direct.data);
        }
    }

    SUBCASE("paper protocol angles: uniform spacing over [-70, 70]") {
        TiltGeometry paper = TiltGeometry::uniform(90, -70, 70, 16, 32);
        CHECK(paper.angles_deg.front() == doctest::Approx(-70.0));
        CHECK(paper.angles_deg.back() == doctest::Approx(70.0));
        double step = paper.angles_deg[1] - paper.angles_deg[0];
        for (std::size_t i = 1; i < paper.angles_deg.size(); ++i)
            CHECK(paper.angles_deg[i] - paper.angles_deg[i - 1] == doctest::Approx(step));
    }

    SUBCASE("full pipeline determinism") {
        DeformationSet defs = sample_random_deformations(
            m, ElasticFieldConfig{5, 0.0, 3.0, 0}, DeformationBounds{}, n, 21);
        NoiseModel noise{0.0, 9, true};
        auto b1 = synthesize_tilt_series(phantom, geom, defs, noise);
        auto b2 = synthesize_tilt_series(phantom, geom, defs, noise);
        for (int i = 0; i < m; ++i)
            CHECK(b1.observed.images[i].data == b2.observed.images[i].data);
    }

    SUBCASE("measured SNR against retained clean images hits the target") {
        DeformationSet defs = sample_random_deformations(
            m, ElasticFieldConfig{5, 0.0, 3.0, 0}, DeformationBounds{}, n, 22);
        NoiseModel noise{0.0, 10, true};
        auto bundle = synthesize_tilt_series(phantom, geom, defs, noise);
        double mean_snr = 0;
        for (int i = 0; i < m; ++i)
            mean_snr += snr_db(bundle.observed.images[i], bundle.deformed_clean.images[i]);
        mean_snr /= m;
        CHECK(std::abs(mean_snr - 0.0) <= 0.3);
    }

    SUBCASE("deformation count mismatch is an error") {
        CHECK_THROWS_AS(synthesize_tilt_series(phantom, geom, DeformationSet::identity(m - 1),
                                               NoiseModel::off()),
                        ShapeError);
    }
}
