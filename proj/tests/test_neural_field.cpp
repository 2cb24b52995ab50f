#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dtomo/neural_field.hpp"
#include "dtomo/rng.hpp"

using namespace dtomo;

TEST_CASE("fourier_encode basic values") {
    auto enc = make_fourier_encoding(4, 3, 8.0, 123);

    SUBCASE("x = 0 gives K ones then K zeros") {
        double x[3] = {0, 0, 0};
        std::vector<double> out(8);
        fourier_encode(enc, x, out.data());
        for (int i = 0; i < 4; ++i) {
            CHECK(out[i] == 1.0);
            CHECK(out[4 + i] == 0.0);
        }
    }

    SUBCASE("b.x = 0.5 gives (cos pi, sin pi)") {
        FourierEncoding one;
        one.k = 1;
        one.dim = 2;
        one.b = {0.5, 0.0};
        double x[2] = {1.0, 0.3};
        std::vector<double> out(2);
        fourier_encode(one, x, out.data());
        CHECK(out[0] == doctest::Approx(-1.0));
        CHECK(out[1] == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("cos block even, sin block odd") {
        Rng rng(7);
        for (int trial = 0; trial < 5; ++trial) {
            double x[3], nx[3];
            for (int d = 0; d < 3; ++d) {
                x[d] = rng.uniform(-1, 1);
                nx[d] = -x[d];
            }
            std::vector<double> a(8), b(8);
            fourier_encode(enc, x, a.data());
            fourier_encode(enc, nx, b.data());
            for (int i = 0; i < 4; ++i) {
                CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-12));
                CHECK(b[4 + i] == doctest::Approx(-a[4 + i]).epsilon(1e-12));
            }
        }
    }

    SUBCASE("output norm squared equals K for any x") {
        Rng rng(11);
        for (int trial = 0; trial < 10; ++trial) {
            double x[3];
            for (int d = 0; d < 3; ++d) x[d] = rng.uniform(-2, 2);
            std::vector<double> out(8);
            fourier_encode(enc, x, out.data());
            double nrm2 = 0;
            for (double v : out) nrm2 += v * v;
            CHECK(nrm2 == doctest::Approx(4.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("mlp_eval hand cases") {
    SUBCASE("all-zero weights: linear final gives 0, softplus final gives ln 2") {
        MLPArchitecture arch{4, 1, 8, 2, FinalActivation::Linear, false};
        auto w = init_weights(arch, 0, InitScheme::FanInUniform);
        for (auto& blk : w.blocks)
            for (auto& v : blk.values) v = 0.0;
        std::vector<double> z{0.5, -0.2, 0.1, 0.9};
        CHECK(mlp_eval(w, z)[0] == 0.0);

        w.arch.final_act = FinalActivation::Softplus;
        CHECK(mlp_eval(w, z)[0] == doctest::Approx(std::log(2.0)));
    }

    SUBCASE("single-weight network doubles its input") {
        MLPArchitecture arch{1, 1, 1, 1, FinalActivation::Linear, false};
        auto w = init_weights(arch, 0, InitScheme::FanInUniform);
        w.w(0).values[0] = 2.0;
        w.bias(0).values[0] = 0.0;
        std::vector<double> z{3.0};
        CHECK(mlp_eval(w, z)[0] == 6.0);
    }

    SUBCASE("one hidden relu unit, hand-set weights") {
        MLPArchitecture arch{1, 1, 1, 2, FinalActivation::Linear, false};
        auto w = init_weights(arch, 0, InitScheme::FanInUniform);
        w.w(0).values[0] = 1.0;
        w.bias(0).values[0] = -0.5;
        w.w(1).values[0] = 2.0;
        w.bias(1).values[0] = 0.0;
        std::vector<double> z{1.0};
        CHECK(mlp_eval(w, z)[0] == doctest::Approx(1.0));  // relu(0.5) * 2
    }

    SUBCASE("shape mismatch is an error") {
        MLPArchitecture arch{3, 1, 4, 2, FinalActivation::Linear, false};
        auto w = init_weights(arch, 0, InitScheme::FanInUniform);
        std::vector<double> z{1.0, 2.0};
        CHECK_THROWS_AS(mlp_eval(w, z), ShapeError);
    }
}

TEST_CASE("init_weights schemes") {
    MLPArchitecture arch{16, 2, 32, 3, FinalActivation::Linear, false};

    SUBCASE("deterministic for fixed seed") {
        auto a = init_weights(arch, 77, InitScheme::FanInUniform);
        auto b = init_weights(arch, 77, InitScheme::FanInUniform);
        for (std::size_t i = 0; i < a.blocks.size(); ++i)
            CHECK(a.blocks[i].values == b.blocks[i].values);
        auto c = init_weights(arch, 78, InitScheme::FanInUniform);
        CHECK(a.blocks[0].values != c.blocks[0].values);
    }

    SUBCASE("zero-last-layer forces exact zero output") {
        auto w = init_weights(arch, 5, InitScheme::ZeroLastLayer);
        Rng rng(3);
        for (int trial = 0; trial < 4; ++trial) {
            std::vector<double> z(16);
            for (auto& v : z) v = rng.normal();
            auto out = mlp_eval(w, z);
            CHECK(out[0] == 0.0);
            CHECK(out[1] == 0.0);
        }
    }

    SUBCASE("fan-in variance close to 1/fan_in") {
        // One wide layer so the sample is large enough: 10k weights.
        MLPArchitecture wide{100, 100, 100, 1, FinalActivation::Linear, false};
        auto w = init_weights(wide, 1234, InitScheme::FanInUniform);
        const auto& vals = w.w(0).values;
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= vals.size();
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= vals.size();
        double target = 1.0 / 100;
        CHECK(var > 0.5 * target);
        CHECK(var < 1.5 * target);
    }
}

TEST_CASE("batched mlp gradients match finite differences across the zoo") {
    struct Zoo {
        int in, out, hidden, depth;
        FinalActivation fa;
    };
    std::vector<Zoo> zoo{
        {6, 1, 8, 3, FinalActivation::Softplus},
        {10, 2, 8, 2, FinalActivation::Linear},
        {4, 1, 5, 1, FinalActivation::Linear},
    };
    for (const auto& z : zoo) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            MLPArchitecture arch{z.in, z.out, z.hidden, z.depth, z.fa, false};
            auto w = init_weights(arch, seed, InitScheme::FanInUniform);
            Rng rng(seed + 100);
            const int P = 3;
            std::vector<double> x(static_cast<std::size_t>(P) * z.in);
            for (auto& v : x) v = rng.uniform(-1, 1);

            // loss = sum of outputs over batch, weighted to make it nontrivial
            std::vector<double> wgt(static_cast<std::size_t>(P) * z.out);
            for (auto& v : wgt) v = rng.normal();

            MlpWorkspace ws;
            mlp_forward(w, x.data(), P, ws);
            auto grads = make_grad_buffers(w);
            std::vector<double> dx(x.size());
            mlp_backward(w, x.data(), P, ws, wgt.data(), grads, dx.data());

            // finite differences on every weight
            const double eps = 1e-5;
            for (std::size_t b = 0; b < w.blocks.size(); ++b) {
                for (std::size_t i = 0; i < w.blocks[b].size(); ++i) {
                    double orig = w.blocks[b].values[i];
                    auto eval = [&]() {
                        MlpWorkspace tmp;
                        mlp_forward(w, x.data(), P, tmp);
                        double acc = 0;
                        const auto& out = tmp.act[arch.depth - 1];
                        for (std::size_t j = 0; j < wgt.size(); ++j) acc += wgt[j] * out[j];
                        return acc;
                    };
                    w.blocks[b].values[i] = orig + eps;
                    double fp = eval();
                    w.blocks[b].values[i] = orig - eps;
                    double fm = eval();
                    w.blocks[b].values[i] = orig;
                    double fd = (fp - fm) / (2 * eps);
                    double ad = grads[b][i];
                    double denom = std::max({1e-6, std::abs(fd), std::abs(ad)});
                    CHECK(std::abs(fd - ad) / denom < 1e-4);
                }
            }

            // input gradients too
            for (std::size_t i = 0; i < x.size(); ++i) {
                double orig = x[i];
                auto eval = [&]() {
                    MlpWorkspace tmp;
                    mlp_forward(w, x.data(), P, tmp);
                    double acc = 0;
                    const auto& out = tmp.act[arch.depth - 1];
                    for (std::size_t j = 0; j < wgt.size(); ++j) acc += wgt[j] * out[j];
                    return acc;
                };
                x[i] = orig + eps;
                double fp = eval();
                x[i] = orig - eps;
                double fm = eval();
                x[i] = orig;
                double fd = (fp - fm) / (2 * eps);
                double denom = std::max({1e-6, std::abs(fd), std::abs(dx[i])});
                CHECK(std::abs(fd - dx[i]) / denom < 1e-4);
            }
        }
    }
}

TEST_CASE("neural volume purity under permutation") {
    VolumeFieldConfig cfg;
    cfg.fourier_count = 8;
    cfg.hidden_width = 12;
    auto nv = make_volume_field(cfg, 5);
    std::vector<Vec3> pts;
    Rng rng(2);
    for (int i = 0; i < 20; ++i)
        pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    std::vector<double> vals;
    for (const auto& p : pts) vals.push_back(nv.eval(p));
    // permuted evaluation gives permuted identical values
    for (int i = 19; i >= 0; --i) CHECK(nv.eval(pts[i]) == vals[i]);
}

TEST_CASE("field checkpoint roundtrip") {
    VolumeFieldConfig cfg;
    cfg.fourier_count = 6;
    cfg.hidden_width = 10;
    cfg.depth = 3;
    auto nv = make_volume_field(cfg, 99);
    std::stringstream ss;
    write_field_checkpoint(nv, ss);
    auto rt = read_field_checkpoint(ss);
    CHECK(rt.encoding.k == nv.encoding.k);
    CHECK(rt.encoding.b == nv.encoding.b);
    CHECK(rt.mlp.blocks.size() == nv.mlp.blocks.size());
    for (std::size_t i = 0; i < rt.mlp.blocks.size(); ++i)
        CHECK(rt.mlp.blocks[i].values == nv.mlp.blocks[i].values);
    Vec3 p{0.3, -0.2, 0.7};
    CHECK(rt.eval(p) == nv.eval(p));

    std::stringstream bad("XXXXjunk");
    CHECK_THROWS_AS(read_field_checkpoint(bad), IoError);
}
