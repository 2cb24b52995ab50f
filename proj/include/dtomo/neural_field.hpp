#pragma once

#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dtomo/autodiff.hpp"
#include "dtomo/binio.hpp"
#include "dtomo/common.hpp"
#include "dtomo/rng.hpp"

namespace dtomo {

// ---------------------------------------------------------------------------
// Fourier feature encoding: x -> [cos(2*pi*B*x); sin(2*pi*B*x)], cosines first.
// ---------------------------------------------------------------------------

struct FourierEncoding {
    int k = 0;                // number of frequency rows
    int dim = 0;              // input dimension
    double sigma = 0.0;       // frequency scale, cycles per unit coordinate
    std::vector<double> b;    // k x dim, row-major

    int output_dim() const { return 2 * k; }
};

inline FourierEncoding make_fourier_encoding(int k, int dim, double sigma, std::uint64_t seed) {
    if (k < 1 || dim < 1) throw ConfigError("fourier encoding: k and dim must be >= 1");
    FourierEncoding enc;
    enc.k = k;
    enc.dim = dim;
    enc.sigma = sigma;
    enc.b.resize(static_cast<std::size_t>(k) * dim);
    Rng rng(derive_seed(seed, 0xf0f0));
    for (auto& v : enc.b) v = sigma * rng.normal();
    return enc;
}

// Multi-scale variant: random directions with log-uniform magnitudes in
// [f_lo, f_hi] cycles per unit, so every octave keeps feature coverage. The
// frequency curriculum needs the low octaves to exist.
inline FourierEncoding make_fourier_encoding_loguniform(int k, int dim, double f_lo, double f_hi,
                                                        std::uint64_t seed) {
    if (k < 1 || dim < 1) throw ConfigError("fourier encoding: k and dim must be >= 1");
    if (!(f_lo > 0 && f_hi >= f_lo)) throw ConfigError("fourier encoding: bad frequency range");
    FourierEncoding enc;
    enc.k = k;
    enc.dim = dim;
    enc.sigma = f_hi;
    enc.b.resize(static_cast<std::size_t>(k) * dim);
    Rng rng(derive_seed(seed, 0xf0f1));
    for (int i = 0; i < k; ++i) {
        double mag = std::exp(rng.uniform(std::log(f_lo), std::log(f_hi)));
        double norm2 = 0;
        std::vector<double> dir(dim);
        do {
            norm2 = 0;
            for (int d = 0; d < dim; ++d) {
                dir[d] = rng.normal();
                norm2 += dir[d] * dir[d];
            }
        } while (norm2 < 1e-12);
        double inv = mag / std::sqrt(norm2);
        for (int d = 0; d < dim; ++d) enc.b[static_cast<std::size_t>(i) * dim + d] = dir[d] * inv;
    }
    return enc;
}

inline void fourier_encode(const FourierEncoding& enc, const double* x, double* out) {
    const double* row = enc.b.data();
    for (int i = 0; i < enc.k; ++i, row += enc.dim) {
        double phase = 0.0;
        for (int d = 0; d < enc.dim; ++d) phase += row[d] * x[d];
        phase *= 2.0 * kPi;
        out[i] = std::cos(phase);
        out[enc.k + i] = std::sin(phase);
    }
}

inline std::vector<double> fourier_encode(const FourierEncoding& enc, std::span<const double> x) {
    std::vector<double> out(enc.output_dim());
    fourier_encode(enc, x.data(), out.data());
    return out;
}

// ---------------------------------------------------------------------------
// Dense MLP on ParamBlocks.
// ---------------------------------------------------------------------------

enum class FinalActivation { Linear, Softplus };

struct MLPArchitecture {
    int input_dim = 0;
    int output_dim = 0;
    int hidden_width = 0;
    int depth = 1;  // number of affine layers; depth 1 is a single affine map
    FinalActivation final_act = FinalActivation::Linear;
    bool zero_init_last = false;

    int layer_in(int l) const { return l == 0 ? input_dim : hidden_width; }
    int layer_out(int l) const { return l == depth - 1 ? output_dim : hidden_width; }

    void validate() const {
        if (depth < 1 || input_dim < 1 || output_dim < 1 || (depth > 1 && hidden_width < 1))
            throw ConfigError("mlp architecture: dimensions must be >= 1");
    }
};

enum class InitScheme { FanInUniform, ZeroLastLayer };

struct MlpWeights {
    MLPArchitecture arch;
    std::vector<ParamBlock> blocks;  // W0, b0, W1, b1, ...

    ParamBlock& w(int l) { return blocks[2 * static_cast<std::size_t>(l)]; }
    ParamBlock& bias(int l) { return blocks[2 * static_cast<std::size_t>(l) + 1]; }
    const ParamBlock& w(int l) const { return blocks[2 * static_cast<std::size_t>(l)]; }
    const ParamBlock& bias(int l) const { return blocks[2 * static_cast<std::size_t>(l) + 1]; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& b : blocks) n += b.size();
        return n;
    }
};

inline MlpWeights init_weights(const MLPArchitecture& arch, std::uint64_t seed, InitScheme scheme,
                               const std::string& tag_prefix = "mlp") {
    arch.validate();
    MlpWeights mw;
    mw.arch = arch;
    Rng rng(derive_seed(seed, 0x11f));
    for (int l = 0; l < arch.depth; ++l) {
        int in = arch.layer_in(l);
        int out = arch.layer_out(l);
        ParamBlock w = ParamBlock::zeros({out, in}, tag_prefix + ".W" + std::to_string(l));
        ParamBlock b = ParamBlock::zeros({out}, tag_prefix + ".b" + std::to_string(l));
        bool zero_this = (scheme == InitScheme::ZeroLastLayer) && (l == arch.depth - 1);
        if (!zero_this) {
            double a = std::sqrt(3.0 / in);  // Var = 1/fan_in
            for (auto& v : w.values) v = rng.uniform(-a, a);
        }
        mw.blocks.push_back(std::move(w));
        mw.blocks.push_back(std::move(b));
    }
    return mw;
}

// y[p] = b + W x[p], W row-major (out x in). Register-blocked 4 points x 4
// outputs; the k-loop vectorizes when the build allows FP reassociation.
inline void affine_forward(const double* x, int p_count, int in, const double* w, const double* b,
                           int out, double* y) {
    int p = 0;
    for (; p + 4 <= p_count; p += 4) {
        const double* x0 = x + static_cast<std::size_t>(p + 0) * in;
        const double* x1 = x + static_cast<std::size_t>(p + 1) * in;
        const double* x2 = x + static_cast<std::size_t>(p + 2) * in;
        const double* x3 = x + static_cast<std::size_t>(p + 3) * in;
        int j = 0;
        for (; j + 4 <= out; j += 4) {
            const double* w0 = w + static_cast<std::size_t>(j + 0) * in;
            const double* w1 = w0 + in;
            const double* w2 = w1 + in;
            const double* w3 = w2 + in;
            double a00 = 0, a01 = 0, a02 = 0, a03 = 0;
            double a10 = 0, a11 = 0, a12 = 0, a13 = 0;
            double a20 = 0, a21 = 0, a22 = 0, a23 = 0;
            double a30 = 0, a31 = 0, a32 = 0, a33 = 0;
            for (int k = 0; k < in; ++k) {
                double xv0 = x0[k], xv1 = x1[k], xv2 = x2[k], xv3 = x3[k];
                double wv0 = w0[k], wv1 = w1[k], wv2 = w2[k], wv3 = w3[k];
                a00 += xv0 * wv0; a01 += xv0 * wv1; a02 += xv0 * wv2; a03 += xv0 * wv3;
                a10 += xv1 * wv0; a11 += xv1 * wv1; a12 += xv1 * wv2; a13 += xv1 * wv3;
                a20 += xv2 * wv0; a21 += xv2 * wv1; a22 += xv2 * wv2; a23 += xv2 * wv3;
                a30 += xv3 * wv0; a31 += xv3 * wv1; a32 += xv3 * wv2; a33 += xv3 * wv3;
            }
            double* y0 = y + static_cast<std::size_t>(p + 0) * out + j;
            double* y1 = y + static_cast<std::size_t>(p + 1) * out + j;
            double* y2 = y + static_cast<std::size_t>(p + 2) * out + j;
            double* y3 = y + static_cast<std::size_t>(p + 3) * out + j;
            y0[0] = a00 + b[j]; y0[1] = a01 + b[j + 1]; y0[2] = a02 + b[j + 2]; y0[3] = a03 + b[j + 3];
            y1[0] = a10 + b[j]; y1[1] = a11 + b[j + 1]; y1[2] = a12 + b[j + 2]; y1[3] = a13 + b[j + 3];
            y2[0] = a20 + b[j]; y2[1] = a21 + b[j + 1]; y2[2] = a22 + b[j + 2]; y2[3] = a23 + b[j + 3];
            y3[0] = a30 + b[j]; y3[1] = a31 + b[j + 1]; y3[2] = a32 + b[j + 2]; y3[3] = a33 + b[j + 3];
        }
        for (; j < out; ++j) {
            const double* wj = w + static_cast<std::size_t>(j) * in;
            double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            for (int k = 0; k < in; ++k) {
                s0 += x0[k] * wj[k];
                s1 += x1[k] * wj[k];
                s2 += x2[k] * wj[k];
                s3 += x3[k] * wj[k];
            }
            y[static_cast<std::size_t>(p + 0) * out + j] = s0 + b[j];
            y[static_cast<std::size_t>(p + 1) * out + j] = s1 + b[j];
            y[static_cast<std::size_t>(p + 2) * out + j] = s2 + b[j];
            y[static_cast<std::size_t>(p + 3) * out + j] = s3 + b[j];
        }
    }
    for (; p < p_count; ++p) {
        const double* xp = x + static_cast<std::size_t>(p) * in;
        double* yp = y + static_cast<std::size_t>(p) * out;
        for (int j = 0; j < out; ++j) {
            const double* wj = w + static_cast<std::size_t>(j) * in;
            double acc = 0;
            for (int k = 0; k < in; ++k) acc += xp[k] * wj[k];
            yp[j] = acc + b[j];
        }
    }
}

// dX[p] = W^T dY[p]; dW += dY[p] x[p]^T; db += dY[p]. Blocked like the
// forward pass to keep the dW/dX traffic down.
inline void affine_backward(const double* x, int p_count, int in, const double* w, int out,
                            const double* dy, double* dw, double* db, double* dx) {
    if (dx) {
        for (int p = 0; p < p_count; ++p) {
            const double* dyp = dy + static_cast<std::size_t>(p) * out;
            double* dxp = dx + static_cast<std::size_t>(p) * in;
            for (int k = 0; k < in; ++k) dxp[k] = 0.0;
            int j = 0;
            for (; j + 4 <= out; j += 4) {
                double g0 = dyp[j], g1 = dyp[j + 1], g2 = dyp[j + 2], g3 = dyp[j + 3];
                const double* w0 = w + static_cast<std::size_t>(j + 0) * in;
                const double* w1 = w0 + in;
                const double* w2 = w1 + in;
                const double* w3 = w2 + in;
                for (int k = 0; k < in; ++k)
                    dxp[k] += g0 * w0[k] + g1 * w1[k] + g2 * w2[k] + g3 * w3[k];
            }
            for (; j < out; ++j) {
                double g = dyp[j];
                const double* wj = w + static_cast<std::size_t>(j) * in;
                for (int k = 0; k < in; ++k) dxp[k] += g * wj[k];
            }
        }
    }
    int p = 0;
    for (; p + 4 <= p_count; p += 4) {
        const double* x0 = x + static_cast<std::size_t>(p + 0) * in;
        const double* x1 = x + static_cast<std::size_t>(p + 1) * in;
        const double* x2 = x + static_cast<std::size_t>(p + 2) * in;
        const double* x3 = x + static_cast<std::size_t>(p + 3) * in;
        const double* d0 = dy + static_cast<std::size_t>(p + 0) * out;
        const double* d1 = dy + static_cast<std::size_t>(p + 1) * out;
        const double* d2 = dy + static_cast<std::size_t>(p + 2) * out;
        const double* d3 = dy + static_cast<std::size_t>(p + 3) * out;
        for (int j = 0; j < out; ++j) {
            double g0 = d0[j], g1 = d1[j], g2 = d2[j], g3 = d3[j];
            db[j] += g0 + g1 + g2 + g3;
            double* dwj = dw + static_cast<std::size_t>(j) * in;
            for (int k = 0; k < in; ++k)
                dwj[k] += g0 * x0[k] + g1 * x1[k] + g2 * x2[k] + g3 * x3[k];
        }
    }
    for (; p < p_count; ++p) {
        const double* xp = x + static_cast<std::size_t>(p) * in;
        const double* dyp = dy + static_cast<std::size_t>(p) * out;
        for (int j = 0; j < out; ++j) {
            double g = dyp[j];
            if (g == 0.0) continue;
            db[j] += g;
            double* dwj = dw + static_cast<std::size_t>(j) * in;
            for (int k = 0; k < in; ++k) dwj[k] += g * xp[k];
        }
    }
}

inline double softplus_scalar(double v) {
    return v > 30.0 ? v : (v < -30.0 ? std::exp(v) : std::log1p(std::exp(v)));
}
inline double logistic_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Batched forward pass with cached pre-activations, reusable across batches.
struct MlpWorkspace {
    int points = 0;
    std::vector<std::vector<double>> pre;   // pre[l]: P x out_l, pre-activation
    std::vector<std::vector<double>> act;   // act[l]: P x out_l, post-activation
    std::vector<std::vector<double>> dact;  // backward scratch, same dims as act

    void prepare(const MLPArchitecture& arch, int p_count) {
        points = p_count;
        pre.resize(arch.depth);
        act.resize(arch.depth);
        dact.resize(arch.depth);
        for (int l = 0; l < arch.depth; ++l) {
            std::size_t n = static_cast<std::size_t>(p_count) * arch.layer_out(l);
            if (pre[l].size() < n) pre[l].resize(n);
            if (act[l].size() < n) act[l].resize(n);
            if (dact[l].size() < n) dact[l].resize(n);
        }
    }
};

// Forward through all layers; x is P x input_dim. Outputs land in
// ws.act[depth-1] (P x output_dim).
inline void mlp_forward(const MlpWeights& mw, const double* x, int p_count, MlpWorkspace& ws) {
    const MLPArchitecture& arch = mw.arch;
    ws.prepare(arch, p_count);
    const double* cur = x;
    for (int l = 0; l < arch.depth; ++l) {
        int in = arch.layer_in(l);
        int out = arch.layer_out(l);
        affine_forward(cur, p_count, in, mw.w(l).values.data(), mw.bias(l).values.data(), out,
                       ws.pre[l].data());
        std::size_t n = static_cast<std::size_t>(p_count) * out;
        if (l == arch.depth - 1) {
            if (arch.final_act == FinalActivation::Softplus) {
                for (std::size_t i = 0; i < n; ++i) ws.act[l][i] = softplus_scalar(ws.pre[l][i]);
            } else {
                for (std::size_t i = 0; i < n; ++i) ws.act[l][i] = ws.pre[l][i];
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                double v = ws.pre[l][i];
                ws.act[l][i] = v > 0.0 ? v : 0.0;
            }
        }
        cur = ws.act[l].data();
    }
}

// Backward from d(loss)/d(output). Accumulates parameter gradients into
// `grads` (same block layout as mw.blocks, pre-sized and zeroed by caller).
// If dx is non-null it receives d(loss)/d(input), P x input_dim.
inline void mlp_backward(const MlpWeights& mw, const double* x, int p_count, MlpWorkspace& ws,
                         const double* d_out, std::vector<std::vector<double>>& grads, double* dx) {
    const MLPArchitecture& arch = mw.arch;
    // Final activation.
    {
        int l = arch.depth - 1;
        std::size_t n = static_cast<std::size_t>(p_count) * arch.layer_out(l);
        if (arch.final_act == FinalActivation::Softplus) {
            for (std::size_t i = 0; i < n; ++i)
                ws.dact[l][i] = d_out[i] * logistic_scalar(ws.pre[l][i]);
        } else {
            for (std::size_t i = 0; i < n; ++i) ws.dact[l][i] = d_out[i];
        }
    }
    for (int l = arch.depth - 1; l >= 0; --l) {
        int in = arch.layer_in(l);
        int out = arch.layer_out(l);
        const double* layer_in_ptr = (l == 0) ? x : ws.act[l - 1].data();
        double* dx_ptr = (l == 0) ? dx : ws.dact[l - 1].data();
        affine_backward(layer_in_ptr, p_count, in, mw.w(l).values.data(), out, ws.dact[l].data(),
                        grads[2 * static_cast<std::size_t>(l)].data(),
                        grads[2 * static_cast<std::size_t>(l) + 1].data(), dx_ptr);
        if (l > 0) {
            // relu mask of the previous layer's pre-activation
            std::size_t n = static_cast<std::size_t>(p_count) * in;
            for (std::size_t i = 0; i < n; ++i)
                if (ws.pre[l - 1][i] <= 0.0) ws.dact[l - 1][i] = 0.0;
        }
    }
}

// Single-input convenience evaluation.
inline std::vector<double> mlp_eval(const MlpWeights& mw, std::span<const double> z) {
    if (static_cast<int>(z.size()) != mw.arch.input_dim)
        throw ShapeError("mlp_eval: input length does not match architecture");
    MlpWorkspace ws;
    mlp_forward(mw, z.data(), 1, ws);
    int out = mw.arch.output_dim;
    return std::vector<double>(ws.act[mw.arch.depth - 1].begin(),
                               ws.act[mw.arch.depth - 1].begin() + out);
}

inline std::vector<std::vector<double>> make_grad_buffers(const MlpWeights& mw) {
    std::vector<std::vector<double>> g(mw.blocks.size());
    for (std::size_t i = 0; i < mw.blocks.size(); ++i) g[i].assign(mw.blocks[i].size(), 0.0);
    return g;
}

// ---------------------------------------------------------------------------
// NeuralVolume: Fourier-encoded coordinate MLP for the density field.
// ---------------------------------------------------------------------------

struct NeuralVolume {
    FourierEncoding encoding;  // dim = 3
    MlpWeights mlp;
    std::uint64_t seed = 0;

    double eval(const Vec3& p) const {
        std::vector<double> z(encoding.output_dim());
        double x[3] = {p.x, p.y, p.z};
        fourier_encode(encoding, x, z.data());
        return mlp_eval(mlp, z)[0];
    }
};

struct VolumeFieldConfig {
    int fourier_count = 48;
    // multi-scale band, cycles per unit; freq_max <= 0 falls back to the
    // Gaussian draw with fourier_sigma
    double freq_min = 0.75;
    double freq_max = 8.0;
    double fourier_sigma = 5.0;
    int hidden_width = 64;
    int depth = 3;
    double output_bias = -2.0;  // softplus(-2) ~ 0.13: start near-empty
};

inline NeuralVolume make_volume_field(const VolumeFieldConfig& cfg, std::uint64_t seed) {
    NeuralVolume nv;
    nv.seed = seed;
    nv.encoding =
        cfg.freq_max > 0
            ? make_fourier_encoding_loguniform(cfg.fourier_count, 3, cfg.freq_min, cfg.freq_max,
                                               seed)
            : make_fourier_encoding(cfg.fourier_count, 3, cfg.fourier_sigma, seed);
    MLPArchitecture arch;
    arch.input_dim = 2 * cfg.fourier_count;
    arch.output_dim = 1;
    arch.hidden_width = cfg.hidden_width;
    arch.depth = cfg.depth;
    arch.final_act = FinalActivation::Softplus;
    nv.mlp = init_weights(arch, derive_seed(seed, 1), InitScheme::FanInUniform, "psi");
    nv.mlp.bias(arch.depth - 1).values[0] = cfg.output_bias;
    return nv;
}

// Local warp networks take the raw 2D coordinate plus its Fourier features.
struct LocalWarpConfig {
    int fourier_count = 16;
    double fourier_sigma = 2.0;
    int hidden_width = 32;
    int depth = 2;
};

struct LocalWarpNet {
    FourierEncoding encoding;  // dim = 2
    MlpWeights mlp;            // input = 2 + 2k, output = 2, zero-init last layer

    int input_dim() const { return 2 + encoding.output_dim(); }

    void encode_input(const Vec2& x, double* z) const {
        z[0] = x.x;
        z[1] = x.y;
        double raw[2] = {x.x, x.y};
        fourier_encode(encoding, raw, z + 2);
    }

    Vec2 eval(const Vec2& x) const {
        std::vector<double> z(input_dim());
        encode_input(x, z.data());
        auto out = mlp_eval(mlp, z);
        return {out[0], out[1]};
    }
};

inline LocalWarpNet make_local_warp_net(const LocalWarpConfig& cfg, std::uint64_t seed,
                                        const std::string& tag) {
    LocalWarpNet net;
    net.encoding = make_fourier_encoding(cfg.fourier_count, 2, cfg.fourier_sigma, seed);
    MLPArchitecture arch;
    arch.input_dim = 2 + 2 * cfg.fourier_count;
    arch.output_dim = 2;
    arch.hidden_width = cfg.hidden_width;
    arch.depth = cfg.depth;
    arch.final_act = FinalActivation::Linear;
    arch.zero_init_last = true;
    net.mlp = init_weights(arch, derive_seed(seed, 2), InitScheme::ZeroLastLayer, tag);
    return net;
}

// ---------------------------------------------------------------------------
// Weight checkpoint: self-describing header + little-endian 64-bit reals.
// ---------------------------------------------------------------------------

inline void write_field_checkpoint(const NeuralVolume& nv, std::ostream& os) {
    os.write("DTNF", 4);
    binio::put_u32(os, 1);  // version
    binio::put_u32(os, static_cast<std::uint32_t>(nv.encoding.dim));
    binio::put_u32(os, static_cast<std::uint32_t>(nv.encoding.k));
    binio::put_f64(os, nv.encoding.sigma);
    binio::put_u64(os, nv.seed);
    const MLPArchitecture& a = nv.mlp.arch;
    binio::put_u32(os, static_cast<std::uint32_t>(a.input_dim));
    binio::put_u32(os, static_cast<std::uint32_t>(a.output_dim));
    binio::put_u32(os, static_cast<std::uint32_t>(a.hidden_width));
    binio::put_u32(os, static_cast<std::uint32_t>(a.depth));
    binio::put_u32(os, a.final_act == FinalActivation::Softplus ? 1 : 0);
    binio::put_f64_array(os, nv.encoding.b);
    binio::put_u32(os, static_cast<std::uint32_t>(nv.mlp.blocks.size()));
    for (const auto& blk : nv.mlp.blocks) binio::put_f64_array(os, blk.values);
}

inline void write_warp_net(const LocalWarpNet& net, std::ostream& os) {
    binio::put_u32(os, static_cast<std::uint32_t>(net.encoding.dim));
    binio::put_u32(os, static_cast<std::uint32_t>(net.encoding.k));
    binio::put_f64(os, net.encoding.sigma);
    const MLPArchitecture& a = net.mlp.arch;
    binio::put_u32(os, static_cast<std::uint32_t>(a.input_dim));
    binio::put_u32(os, static_cast<std::uint32_t>(a.output_dim));
    binio::put_u32(os, static_cast<std::uint32_t>(a.hidden_width));
    binio::put_u32(os, static_cast<std::uint32_t>(a.depth));
    binio::put_f64_array(os, net.encoding.b);
    binio::put_u32(os, static_cast<std::uint32_t>(net.mlp.blocks.size()));
    for (const auto& blk : net.mlp.blocks) binio::put_f64_array(os, blk.values);
}

inline LocalWarpNet read_warp_net(std::istream& is, const std::string& tag) {
    LocalWarpNet net;
    net.encoding.dim = static_cast<int>(binio::get_u32(is, "warp enc dim"));
    net.encoding.k = static_cast<int>(binio::get_u32(is, "warp enc k"));
    net.encoding.sigma = binio::get_f64(is, "warp enc sigma");
    MLPArchitecture a;
    a.input_dim = static_cast<int>(binio::get_u32(is, "warp input_dim"));
    a.output_dim = static_cast<int>(binio::get_u32(is, "warp output_dim"));
    a.hidden_width = static_cast<int>(binio::get_u32(is, "warp hidden_width"));
    a.depth = static_cast<int>(binio::get_u32(is, "warp depth"));
    a.final_act = FinalActivation::Linear;
    a.zero_init_last = true;
    net.encoding.b = binio::get_f64_array(is, "warp enc b");
    std::uint32_t nblocks = binio::get_u32(is, "warp block count");
    net.mlp.arch = a;
    for (std::uint32_t i = 0; i < nblocks; ++i) {
        auto vals = binio::get_f64_array(is, "warp block");
        int l = static_cast<int>(i / 2);
        bool is_w = (i % 2) == 0;
        std::vector<int> shape = is_w ? std::vector<int>{a.layer_out(l), a.layer_in(l)}
                                      : std::vector<int>{a.layer_out(l)};
        std::string t = tag + (is_w ? ".W" : ".b") + std::to_string(l);
        net.mlp.blocks.emplace_back(std::move(vals), shape, t);
    }
    return net;
}

inline NeuralVolume read_field_checkpoint(std::istream& is) {
    char magic[4];
    if (!binio::get_bytes(is, magic, 4) || std::string(magic, 4) != "DTNF")
        throw IoError("field checkpoint: bad magic");
    if (binio::get_u32(is, "version") != 1) throw IoError("field checkpoint: unknown version");
    NeuralVolume nv;
    nv.encoding.dim = static_cast<int>(binio::get_u32(is, "enc dim"));
    nv.encoding.k = static_cast<int>(binio::get_u32(is, "enc k"));
    nv.encoding.sigma = binio::get_f64(is, "enc sigma");
    nv.seed = binio::get_u64(is, "seed");
    MLPArchitecture a;
    a.input_dim = static_cast<int>(binio::get_u32(is, "input_dim"));
    a.output_dim = static_cast<int>(binio::get_u32(is, "output_dim"));
    a.hidden_width = static_cast<int>(binio::get_u32(is, "hidden_width"));
    a.depth = static_cast<int>(binio::get_u32(is, "depth"));
    a.final_act = binio::get_u32(is, "final_act") ? FinalActivation::Softplus : FinalActivation::Linear;
    nv.encoding.b = binio::get_f64_array(is, "enc b");
    std::uint32_t nblocks = binio::get_u32(is, "block count");
    nv.mlp.arch = a;
    for (std::uint32_t i = 0; i < nblocks; ++i) {
        auto vals = binio::get_f64_array(is, "block");
        int l = static_cast<int>(i / 2);
        bool is_w = (i % 2) == 0;
        std::vector<int> shape = is_w ? std::vector<int>{a.layer_out(l), a.layer_in(l)}
                                      : std::vector<int>{a.layer_out(l)};
        std::string tag = (is_w ? "psi.W" : "psi.b") + std::to_string(l);
        nv.mlp.blocks.emplace_back(std::move(vals), shape, tag);
    }
    return nv;
}

}  // namespace dtomo
