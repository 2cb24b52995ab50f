#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dtomo/deformation.hpp"
#include "dtomo/rng.hpp"

using namespace dtomo;

TEST_CASE("warp_coords conventions") {
    SUBCASE("identity parameters are the exact identity map") {
        TiltDeformation phi;  // alpha=0, tau=0, no local
        Rng rng(1);
        for (int i = 0; i < 10; ++i) {
            Vec2 x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
            Vec2 w = warp_coords(phi, x);
            CHECK(w.x == x.x);  // bitwise
            CHECK(w.y == x.y);
        }
    }

    SUBCASE("pure shift adds tau") {
        TiltDeformation phi;
        phi.tau = {0.1, 0.0};
        Vec2 w = warp_coords(phi, {0.25, -0.5});
        CHECK(w.x == doctest::Approx(0.35));
        CHECK(w.y == doctest::Approx(-0.5));
    }

    SUBCASE("pure rotation by 90 degrees maps (1,0) to (0,-1)") {
        TiltDeformation phi;
        phi.alpha_rad = deg2rad(90.0);
        Vec2 w = warp_coords(phi, {1.0, 0.0});
        CHECK(w.x == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(w.y == doctest::Approx(-1.0));
    }

    SUBCASE("zero-initialized warp net keeps the identity") {
        LocalWarpConfig cfg;
        TiltDeformation phi;
        phi.local = LocalDisplacement::from_net(make_local_warp_net(cfg, 3, "gamma"));
        Vec2 x{0.4, -0.7};
        Vec2 w = warp_coords(phi, x);
        CHECK(w.x == x.x);
        CHECK(w.y == x.y);
    }
}

TEST_CASE("warp jacobians match finite differences") {
    LocalWarpConfig cfg;
    cfg.fourier_count = 4;
    cfg.hidden_width = 8;
    TiltDeformation phi;
    phi.alpha_rad = deg2rad(7.0);
    phi.tau = {0.05, -0.08};
    phi.local = LocalDisplacement::from_net(make_local_warp_net(cfg, 11, "gamma"));
    // give the net a nonzero last layer so l != 0
    Rng rng(5);
    for (auto& v : phi.local.net.mlp.blocks.back().values) v = 0.02 * rng.normal();
    for (auto& v : phi.local.net.mlp.w(cfg.depth - 1).values) v = 0.05 * rng.normal();

    Vec2 x{0.3, 0.2};
    auto jac = warp_coords_jacobian(phi, x);
    Vec2 w0 = warp_coords(phi, x);
    CHECK(jac.w.x == doctest::Approx(w0.x));
    CHECK(jac.w.y == doctest::Approx(w0.y));

    const double eps = 1e-6;
    // alpha
    {
        TiltDeformation p = phi;
        p.alpha_rad += eps;
        Vec2 wp = warp_coords(p, x);
        p.alpha_rad -= 2 * eps;
        Vec2 wm = warp_coords(p, x);
        CHECK(jac.dw_dalpha.x == doctest::Approx((wp.x - wm.x) / (2 * eps)).epsilon(1e-4));
        CHECK(jac.dw_dalpha.y == doctest::Approx((wp.y - wm.y) / (2 * eps)).epsilon(1e-4));
    }
    // tau
    {
        TiltDeformation p = phi;
        p.tau.x += eps;
        Vec2 wp = warp_coords(p, x);
        p.tau.x -= 2 * eps;
        Vec2 wm = warp_coords(p, x);
        CHECK(jac.dw_dq.a == doctest::Approx((wp.x - wm.x) / (2 * eps)).epsilon(1e-4));
        CHECK(jac.dw_dq.c == doctest::Approx((wp.y - wm.y) / (2 * eps)).epsilon(1e-4));
        p = phi;
        p.tau.y += eps;
        wp = warp_coords(p, x);
        p.tau.y -= 2 * eps;
        wm = warp_coords(p, x);
        CHECK(jac.dw_dq.b == doctest::Approx((wp.x - wm.x) / (2 * eps)).epsilon(1e-4));
        CHECK(jac.dw_dq.d == doctest::Approx((wp.y - wm.y) / (2 * eps)).epsilon(1e-4));
    }
}

TEST_CASE("deform_image behavior") {
    const int n = 16;
    Image img(n);
    Rng rng(4);
    for (auto& v : img.data) v = rng.uniform(0, 1);

    SUBCASE("identity returns the input exactly") {
        TiltDeformation phi;
        Image out = deform_image(img, phi);
        for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == img.data[i]);
    }

    SUBCASE("one-pixel shift relabels interior pixels bitwise") {
        TiltDeformation phi;
        phi.tau = {2.0 / n, 0.0};  // exactly one pixel step
        Image out = deform_image(img, phi);
        for (int v = 0; v < n; ++v)
            for (int u = 0; u < n - 1; ++u) CHECK(out.at(v, u) == img.at(v, u + 1));
    }

    SUBCASE("rotate forward then back recovers a smooth image to 2%") {
        // smooth image: wide Gaussian bump
        const int ns = 32;
        Image smooth(ns);
        for (int v = 0; v < ns; ++v)
            for (int u = 0; u < ns; ++u) {
                double x = pixel_center(u, ns), y = pixel_center(v, ns);
                smooth.at(v, u) = std::exp(-(x * x + y * y) / (2 * 0.3 * 0.3));
            }
        TiltDeformation fwd, bwd;
        fwd.alpha_rad = deg2rad(8.0);
        bwd.alpha_rad = deg2rad(-8.0);
        Image once = deform_image(smooth, fwd);
        Image round = deform_image(once, bwd);
        double diff = 0, norm = 0;
        for (std::size_t i = 0; i < smooth.data.size(); ++i) {
            diff += (round.data[i] - smooth.data[i]) * (round.data[i] - smooth.data[i]);
            norm += smooth.data[i] * smooth.data[i];
        }
        CHECK(std::sqrt(diff / norm) < 0.02);
    }

    SUBCASE("linear in the image for fixed warp") {
        TiltDeformation phi;
        phi.tau = {0.07, -0.03};
        phi.alpha_rad = deg2rad(3.0);
        Image img2(n);
        for (auto& v : img2.data) v = rng.uniform(-1, 1);
        Image mix(n);
        const double a = 1.3, b = -0.4;
        for (std::size_t i = 0; i < mix.data.size(); ++i)
            mix.data[i] = a * img.data[i] + b * img2.data[i];
        Image da = deform_image(img, phi);
        Image db = deform_image(img2, phi);
        Image dm = deform_image(mix, phi);
        for (std::size_t i = 0; i < dm.data.size(); ++i)
            CHECK(dm.data[i] == doctest::Approx(a * da.data[i] + b * db.data[i]).epsilon(1e-10));
    }
}

TEST_CASE("elastic field sampling") {
    const int n = 64;
    ElasticFieldConfig cfg;
    cfg.seed = 21;

    SUBCASE("zero amplitude gives the zero field") {
        ElasticFieldConfig z = cfg;
        z.max_px = 0.0;
        DenseField f = sample_elastic_field(z, n);
        for (double v : f.data) CHECK(v == 0.0);
    }

    SUBCASE("deterministic per seed") {
        DenseField a = sample_elastic_field(cfg, n);
        DenseField b = sample_elastic_field(cfg, n);
        CHECK(a.data == b.data);
        ElasticFieldConfig other = cfg;
        other.seed = 22;
        DenseField c = sample_elastic_field(other, n);
        CHECK(a.data != c.data);
    }

    SUBCASE("peak norm equals max_px and Jacobian stays below 1") {
        DenseField f = sample_elastic_field(cfg, n);
        CHECK(f.max_norm() == doctest::Approx(3.0 * 2.0 / n).epsilon(1e-9));
        // finite-difference Jacobian in pixel units (displacement px / position px)
        double worst = 0.0;
        for (int v = 0; v < n - 1; ++v)
            for (int u = 0; u < n - 1; ++u)
                for (int comp = 0; comp < 2; ++comp) {
                    double du = (f.at(v, u + 1, comp) - f.at(v, u, comp)) * n / 2.0;
                    double dv = (f.at(v + 1, u, comp) - f.at(v, u, comp)) * n / 2.0;
                    worst = std::max({worst, std::abs(du), std::abs(dv)});
                }
        CHECK(worst < 1.0);
    }
}

TEST_CASE("random deformation draws") {
    const int n = 32, m = 3;
    ElasticFieldConfig cfg;
    DeformationBounds bounds;
    DeformationSet set = sample_random_deformations(m, cfg, bounds, n, 31);

    SUBCASE("bounds are respected and fields are distinct") {
        for (const auto& t : set.tilts) {
            CHECK(std::abs(t.tau.x) <= 0.2);
            CHECK(std::abs(t.tau.y) <= 0.2);
            CHECK(std::abs(t.alpha_deg()) <= 10.0);
        }
        CHECK(set.tilts[0].local.field.data != set.tilts[1].local.field.data);
        CHECK(set.tilts[1].local.field.data != set.tilts[2].local.field.data);
    }

    SUBCASE("simulated warps keep the detector center well inside [-1.3,1.3]^2") {
        DeformationSet big = sample_random_deformations(64, cfg, bounds, n, 77);
        for (const auto& t : big.tilts) {
            Vec2 w = warp_coords(t, {0, 0});
            CHECK(std::abs(w.x) < 1.3);
            CHECK(std::abs(w.y) < 1.3);
        }
    }

    SUBCASE("alpha draw is centered") {
        double mean = 0;
        const int draws = 10000;
        DeformationSet many = sample_random_deformations(draws, ElasticFieldConfig{2, 1.0, 0.0, 0},
                                                         bounds, 4, 123);
        for (const auto& t : many.tilts) mean += t.alpha_deg();
        mean /= draws;
        CHECK(std::abs(mean) < 0.3);
    }
}

TEST_CASE("deformation dump roundtrip") {
    const int n = 8, m = 2;
    DeformationSet set = sample_random_deformations(m, ElasticFieldConfig{3, 1.0, 2.0, 5},
                                                    DeformationBounds{}, n, 9);
    std::stringstream ss;
    write_deformation_set(set, n, ss);
    DeformationSet rt = read_deformation_set(ss);
    REQUIRE(rt.count() == m);
    for (int i = 0; i < m; ++i) {
        CHECK(rt.tilts[i].alpha_rad == doctest::Approx(set.tilts[i].alpha_rad).epsilon(1e-15));
        CHECK(rt.tilts[i].tau.x == set.tilts[i].tau.x);
        CHECK(rt.tilts[i].tau.y == set.tilts[i].tau.y);
        CHECK(rt.tilts[i].local.field.data == set.tilts[i].local.field.data);
    }

    std::stringstream bad("nope");
    CHECK_THROWS_AS(read_deformation_set(bad), IoError);
}
