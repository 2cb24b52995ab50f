#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "dtomo/autodiff.hpp"
#include "dtomo/common.hpp"
#include "dtomo/deformation.hpp"
#include "dtomo/geometry.hpp"
#include "dtomo/neural_field.hpp"
#include "dtomo/rng.hpp"

namespace dtomo {

// Joint estimation of the volume field and per-tilt deformations by pixel
// minibatch descent on the mean-square objective. The deformation is applied
// to the sampled detector coordinate before ray casting, which renders only
// the pixels in the batch; the gradients below are hand-derived and checked
// against finite differences in the test suites.

enum class TrainMode { Est, EstWo };

struct TrainConfig {
    int iterations = 20000;
    int batch_pixels = 1024;
    int tilts_per_batch = 0;  // 0 = sample uniformly over all (tilt, pixel)
    double lr_volume = 3e-3;
    double lr_global = 1e-3;  // alpha (radians) and tau
    double lr_local = 1e-4;   // warp network weights
    int ray_samples = 0;      // 0 = detector size
    std::uint64_t seed = 99;
    std::uint64_t field_seed = 3;
    TrainMode mode = TrainMode::Est;
    int log_every = 100;
    double divergence_tol = 0.25;  // smoothed-loss increase triggering abort
    // Frequency curriculum: encoding features above an opening cutoff are
    // gated off early so alignment converges on smooth structure first. The
    // cutoff ramps from freq_start (cycles/unit) to the full band over
    // freq_ramp_iters iterations; 0 disables the gate entirely.
    int freq_ramp_iters = 0;
    double freq_start = 1.5;
    // Local warp networks stay frozen for the first local_warmup_iters
    // iterations so the global shift/rotation cannot leak into them.
    int local_warmup_iters = 0;
    VolumeFieldConfig field;
    LocalWarpConfig local;
};

struct TrainTilt {
    ParamBlock alpha;  // radians
    ParamBlock tau;
    LocalWarpNet net;
    bool use_fixed_field = false;  // oracle path: dense truth field, no learning
    DenseField fixed_field;

    TiltDeformation deformation() const {
        TiltDeformation d;
        d.alpha_rad = alpha.values[0];
        d.tau = {tau.values[0], tau.values[1]};
        if (use_fixed_field)
            d.local = LocalDisplacement::from_field(fixed_field);
        else
            d.local = LocalDisplacement::from_net(net);
        return d;
    }
};

struct TrainState {
    NeuralVolume field;
    std::vector<TrainTilt> tilts;
    TiltGeometry render_geom;  // detector size + training ray count
    long iteration = 0;
    std::vector<double> loss_history;
    std::vector<double> freq_gate;  // per encoding row; empty = fully open

    DeformationSet deformations() const {
        DeformationSet s;
        for (const auto& t : tilts) s.tilts.push_back(t.deformation());
        return s;
    }
};

struct PixelRef {
    int m = 0;
    int iu = 0;
    int iv = 0;
};

namespace detail {

// Fills `count` encoding rows for points p_j = origin + j * step using the
// phase recurrence exp(i phi_{j+1}) = exp(i phi_j) exp(i dphi): two sincos
// per frequency per path instead of one per sample.
inline void encode_linear_path(const FourierEncoding& enc, const Vec3& origin, const Vec3& step,
                               int count, double* z, std::vector<double>& scratch) {
    const int k = enc.k;
    scratch.resize(static_cast<std::size_t>(4) * k);
    double* c = scratch.data();
    double* s = c + k;
    double* cd = s + k;
    double* sd = cd + k;
    const double* b = enc.b.data();
    for (int i = 0; i < k; ++i) {
        const double* row = b + static_cast<std::size_t>(i) * 3;
        double p0 = 2.0 * kPi * (row[0] * origin.x + row[1] * origin.y + row[2] * origin.z);
        double dp = 2.0 * kPi * (row[0] * step.x + row[1] * step.y + row[2] * step.z);
        c[i] = std::cos(p0);
        s[i] = std::sin(p0);
        cd[i] = std::cos(dp);
        sd[i] = std::sin(dp);
    }
    const int row_len = 2 * k;
    for (int j = 0; j < count; ++j) {
        double* row = z + static_cast<std::size_t>(j) * row_len;
        for (int i = 0; i < k; ++i) {
            row[i] = c[i];
            row[k + i] = s[i];
            double cn = c[i] * cd[i] - s[i] * sd[i];
            s[i] = c[i] * sd[i] + s[i] * cd[i];
            c[i] = cn;
        }
    }
}

struct RayScratch {
    std::vector<double> z;        // tile points x 2K encodings
    std::vector<double> d_out;    // upstream per point
    std::vector<double> dz;       // gradient w.r.t. encodings
    std::vector<double> phase;    // encode_linear_path scratch
    MlpWorkspace ws;
};

}  // namespace detail

struct TiltGrads {
    double alpha = 0.0;
    Vec2 tau;
    std::vector<std::vector<double>> gamma;  // per net block; empty when unused
};

struct BatchGrads {
    std::vector<std::vector<double>> psi;  // per field block
    std::vector<TiltGrads> tilts;          // per tilt
};

namespace detail {

inline Vec3 ray_origin(double theta_cos, double theta_sin, const Vec2& w, double t0) {
    // p(t) = (wu cos - t sin, wv, wu sin + t cos)
    return {w.x * theta_cos - t0 * theta_sin, w.y, w.x * theta_sin + t0 * theta_cos};
}

inline Vec3 ray_step(double theta_cos, double theta_sin, double dt) {
    return {-theta_sin * dt, 0.0, theta_cos * dt};
}

}  // namespace detail

// Shared forward/backward over a batch of pixels. Returns the mean squared
// residual; when `grads` is non-null, accumulates exact reverse-mode
// gradients for the field and (in Est mode) for every touched deformation.
inline double render_loss_batch(TrainState& state, const TiltSeries& obs,
                                std::vector<PixelRef> batch, BatchGrads* grads,
                                bool deform_grads) {
    if (batch.empty()) throw ConfigError("render_loss_batch: empty batch");
    const TiltGeometry& geom = state.render_geom;
    const int n = geom.detector_size;
    const int s_count = geom.ray_samples;
    const int m_count = geom.tilt_count();
    const double dt = 2.0 / s_count;
    const double t0 = -1.0 + 0.5 * dt;
    const int k_vol = state.field.encoding.k;
    const int enc_dim = 2 * k_vol;
    const std::size_t b_total = batch.size();

    for (const PixelRef& p : batch)
        if (p.m < 0 || p.m >= m_count || p.iu < 0 || p.iu >= n || p.iv < 0 || p.iv >= n)
            throw ConfigError("render_loss_batch: pixel reference out of range");

    std::stable_sort(batch.begin(), batch.end(),
                     [](const PixelRef& a, const PixelRef& b) { return a.m < b.m; });

    if (grads) {
        grads->psi.resize(state.field.mlp.blocks.size());
        for (std::size_t i = 0; i < grads->psi.size(); ++i)
            grads->psi[i].assign(state.field.mlp.blocks[i].size(), 0.0);
        grads->tilts.assign(state.tilts.size(), TiltGrads{});
    }

    // Per-pixel warp evaluation, grouped by tilt for the warp nets.
    struct PixelWork {
        Vec2 x;
        WarpJacobian jac;
        double target = 0.0;
        double rendered = 0.0;
        Vec2 dL_dw;  // accumulated during backward
    };
    std::vector<PixelWork> work(b_total);

    struct Group {
        int m = 0;
        std::size_t begin = 0, end = 0;
        std::vector<double> inputs;  // P_g x net input dim
        MlpWorkspace ws;
        bool net_path = false;
    };
    std::vector<Group> groups;
    for (std::size_t i = 0; i < b_total;) {
        std::size_t j = i;
        while (j < b_total && batch[j].m == batch[i].m) ++j;
        groups.push_back(Group{batch[i].m, i, j, {}, {}, false});
        i = j;
    }

    for (auto& g : groups) {
        TrainTilt& tilt = state.tilts[g.m];
        const std::size_t p_count = g.end - g.begin;
        g.net_path = !tilt.use_fixed_field;
        std::vector<Vec2> local(p_count);
        if (g.net_path) {
            const int in_dim = tilt.net.input_dim();
            g.inputs.resize(p_count * static_cast<std::size_t>(in_dim));
            for (std::size_t i = 0; i < p_count; ++i) {
                const PixelRef& p = batch[g.begin + i];
                Vec2 x{pixel_center(p.iu, n), pixel_center(p.iv, n)};
                tilt.net.encode_input(x, g.inputs.data() + i * in_dim);
            }
            mlp_forward(tilt.net.mlp, g.inputs.data(), static_cast<int>(p_count), g.ws);
            const auto& out = g.ws.act[tilt.net.mlp.arch.depth - 1];
            for (std::size_t i = 0; i < p_count; ++i) local[i] = {out[2 * i], out[2 * i + 1]};
        } else {
            for (std::size_t i = 0; i < p_count; ++i) {
                const PixelRef& p = batch[g.begin + i];
                Vec2 x{pixel_center(p.iu, n), pixel_center(p.iv, n)};
                local[i] = tilt.fixed_field.eval(x);
            }
        }
        const double alpha = tilt.alpha.values[0];
        const Vec2 tau{tilt.tau.values[0], tilt.tau.values[1]};
        const double ca = std::cos(alpha), sa = std::sin(alpha);
        for (std::size_t i = 0; i < p_count; ++i) {
            const PixelRef& p = batch[g.begin + i];
            PixelWork& pw = work[g.begin + i];
            pw.x = {pixel_center(p.iu, n), pixel_center(p.iv, n)};
            Vec2 q = pw.x + local[i] + tau;
            pw.jac.dw_dq = {ca, sa, -sa, ca};
            pw.jac.w = pw.jac.dw_dq.apply(q);
            pw.jac.dw_dalpha = {-sa * q.x + ca * q.y, -ca * q.x - sa * q.y};
            pw.target = obs.images[p.m].at(p.iv, p.iu);
        }
    }

    // Volume pass over pixel tiles.
    static thread_local detail::RayScratch scratch;
    const int tile_pixels = std::max<int>(1, 8192 / s_count) * 4;
    double loss = 0.0;

    std::vector<double> cs(m_count), sn(m_count);
    for (int i = 0; i < m_count; ++i) {
        double th = deg2rad(geom.angles_deg[i]);
        cs[i] = std::cos(th);
        sn[i] = std::sin(th);
    }

    const MlpWeights& vol_mlp = state.field.mlp;
    for (std::size_t tile_begin = 0; tile_begin < b_total;) {
        const std::size_t tile_end = std::min(b_total, tile_begin + tile_pixels);
        const int px_in_tile = static_cast<int>(tile_end - tile_begin);
        const int pts = px_in_tile * s_count;

        scratch.z.resize(static_cast<std::size_t>(pts) * enc_dim);
        for (int i = 0; i < px_in_tile; ++i) {
            const PixelRef& p = batch[tile_begin + i];
            const PixelWork& pw = work[tile_begin + i];
            Vec3 origin = detail::ray_origin(cs[p.m], sn[p.m], pw.jac.w, t0);
            Vec3 step = detail::ray_step(cs[p.m], sn[p.m], dt);
            detail::encode_linear_path(state.field.encoding, origin, step, s_count,
                                       scratch.z.data() + static_cast<std::size_t>(i) * s_count *
                                                              enc_dim,
                                       scratch.phase);
        }
        if (!state.freq_gate.empty()) {
            // Gated features scale both trig columns; the deformation chain
            // below picks the gate up automatically through the stored rows.
            const double* gate = state.freq_gate.data();
            for (int pt = 0; pt < pts; ++pt) {
                double* row = scratch.z.data() + static_cast<std::size_t>(pt) * enc_dim;
                for (int k = 0; k < k_vol; ++k) {
                    row[k] *= gate[k];
                    row[k_vol + k] *= gate[k];
                }
            }
        }

        mlp_forward(vol_mlp, scratch.z.data(), pts, scratch.ws);
        const auto& density = scratch.ws.act[vol_mlp.arch.depth - 1];

        scratch.d_out.resize(pts);
        for (int i = 0; i < px_in_tile; ++i) {
            PixelWork& pw = work[tile_begin + i];
            double acc = 0.0;
            const double* v = density.data() + static_cast<std::size_t>(i) * s_count;
            for (int s = 0; s < s_count; ++s) acc += v[s];
            pw.rendered = acc * dt;
            double r = pw.rendered - pw.target;
            loss += r * r;
            const double up = 2.0 * r / static_cast<double>(b_total) * dt;
            double* d = scratch.d_out.data() + static_cast<std::size_t>(i) * s_count;
            for (int s = 0; s < s_count; ++s) d[s] = up;
        }

        if (grads) {
            double* dz_ptr = nullptr;
            if (deform_grads) {
                scratch.dz.resize(static_cast<std::size_t>(pts) * enc_dim);
                dz_ptr = scratch.dz.data();
            }
            mlp_backward(vol_mlp, scratch.z.data(), pts, scratch.ws, scratch.d_out.data(),
                         grads->psi, dz_ptr);

            if (deform_grads) {
                const double* b = state.field.encoding.b.data();
                for (int i = 0; i < px_in_tile; ++i) {
                    const PixelRef& p = batch[tile_begin + i];
                    PixelWork& pw = work[tile_begin + i];
                    double gu = 0.0, gv = 0.0;
                    for (int s = 0; s < s_count; ++s) {
                        const std::size_t row =
                            (static_cast<std::size_t>(i) * s_count + s) * enc_dim;
                        const double* zr = scratch.z.data() + row;
                        const double* dzr = scratch.dz.data() + row;
                        // dL/dp = sum_k 2 pi b_k (cos_k * dz_sin_k - sin_k * dz_cos_k)
                        double gx = 0, gy = 0, gz = 0;
                        for (int k = 0; k < k_vol; ++k) {
                            double coef = zr[k] * dzr[k_vol + k] - zr[k_vol + k] * dzr[k];
                            const double* row_b = b + static_cast<std::size_t>(k) * 3;
                            gx += coef * row_b[0];
                            gy += coef * row_b[1];
                            gz += coef * row_b[2];
                        }
                        gx *= 2.0 * kPi;
                        gy *= 2.0 * kPi;
                        gz *= 2.0 * kPi;
                        // dp/dwu = (cos, 0, sin); dp/dwv = (0, 1, 0)
                        gu += gx * cs[p.m] + gz * sn[p.m];
                        gv += gy;
                    }
                    pw.dL_dw = {gu, gv};
                }
            }
        }
        tile_begin = tile_end;
    }
    loss /= static_cast<double>(b_total);

    if (grads && deform_grads) {
        for (auto& g : groups) {
            TrainTilt& tilt = state.tilts[g.m];
            TiltGrads& tg = grads->tilts[g.m];
            const std::size_t p_count = g.end - g.begin;
            std::vector<double> upstream(p_count * 2);
            for (std::size_t i = 0; i < p_count; ++i) {
                const PixelWork& pw = work[g.begin + i];
                // dL/dq = R(-alpha)^T dL/dw; same for tau and local l
                const Mat2& r = pw.jac.dw_dq;
                double qx = r.a * pw.dL_dw.x + r.c * pw.dL_dw.y;
                double qy = r.b * pw.dL_dw.x + r.d * pw.dL_dw.y;
                tg.tau.x += qx;
                tg.tau.y += qy;
                tg.alpha += pw.dL_dw.x * pw.jac.dw_dalpha.x + pw.dL_dw.y * pw.jac.dw_dalpha.y;
                upstream[2 * i] = qx;
                upstream[2 * i + 1] = qy;
            }
            if (g.net_path) {
                if (tg.gamma.empty()) tg.gamma = make_grad_buffers(tilt.net.mlp);
                mlp_backward(tilt.net.mlp, g.inputs.data(), static_cast<int>(p_count), g.ws,
                             upstream.data(), tg.gamma, nullptr);
            }
        }
    }
    return loss;
}

// Forward-only mean-square loss over a pixel batch (the public objective).
inline double loss_batch(TrainState& state, const TiltSeries& obs,
                         const std::vector<PixelRef>& batch) {
    return render_loss_batch(state, obs, batch, nullptr, false);
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainSample {
    long iteration = 0;
    double loss = 0.0;
    double wall_s = 0.0;
};

struct TrainResult {
    TrainState state;
    std::vector<TrainSample> trace;
};

struct AdamSet {
    std::vector<AdamState> field_states;
    std::vector<AdamState> alpha_states;
    std::vector<AdamState> tau_states;
    std::vector<std::vector<AdamState>> gamma_states;
};

inline TrainState init_train_state(const TrainConfig& cfg, const TiltGeometry& obs_geom) {
    TrainState st;
    st.field = make_volume_field(cfg.field, cfg.field_seed);
    st.render_geom = obs_geom;
    st.render_geom.ray_samples = cfg.ray_samples > 0 ? cfg.ray_samples : obs_geom.detector_size;
    st.render_geom.validate();
    const int m = obs_geom.tilt_count();
    st.tilts.reserve(m);
    for (int i = 0; i < m; ++i) {
        TrainTilt t;
        t.alpha = ParamBlock::scalar(0.0, "alpha[" + std::to_string(i) + "]");
        t.tau = ParamBlock({0.0, 0.0}, {2}, "tau[" + std::to_string(i) + "]");
        t.net = make_local_warp_net(cfg.local, derive_seed(cfg.field_seed, 500 + i),
                                    "gamma[" + std::to_string(i) + "]");
        st.tilts.push_back(std::move(t));
    }
    return st;
}

inline std::vector<PixelRef> sample_batch(Rng& rng, const TrainConfig& cfg, int m_count, int n) {
    std::vector<PixelRef> batch(cfg.batch_pixels);
    if (cfg.tilts_per_batch > 0 && cfg.tilts_per_batch < m_count) {
        std::vector<int> tilt_ids(m_count);
        for (int i = 0; i < m_count; ++i) tilt_ids[i] = i;
        for (int i = 0; i < cfg.tilts_per_batch; ++i) {
            int j = i + static_cast<int>(rng.bounded(static_cast<std::uint32_t>(m_count - i)));
            std::swap(tilt_ids[i], tilt_ids[j]);
        }
        for (auto& p : batch) {
            p.m = tilt_ids[rng.bounded(static_cast<std::uint32_t>(cfg.tilts_per_batch))];
            p.iu = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(n)));
            p.iv = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(n)));
        }
    } else {
        for (auto& p : batch) {
            p.m = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(m_count)));
            p.iu = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(n)));
            p.iv = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(n)));
        }
    }
    return batch;
}

// Runs the minibatch loop. Throws NumericsError on divergence (non-finite
// loss, or the window-smoothed loss rising divergence_tol above its best),
// after writing the current field to `abort_checkpoint_path` when provided.
inline TrainResult train(const TrainConfig& cfg, const TiltSeries& obs,
                         const std::string& abort_checkpoint_path = "");

// Same loop, but starting from a caller-prepared state (used for oracle runs
// that freeze ground-truth deformations into the tilts).
inline TrainResult train_from_state(TrainState init, const TrainConfig& cfg,
                                    const TiltSeries& obs,
                                    const std::string& abort_checkpoint_path = "");

// ---------------------------------------------------------------------------
// Full-frame rendering and voxelization.
// ---------------------------------------------------------------------------

// Renders P(R_theta(V)) for one tilt, optionally composing the deformation
// pull-back at each pixel.
inline Image render_frame(const NeuralVolume& field, const TiltDeformation* phi, double theta_deg,
                          const TiltGeometry& geom) {
    const int n = geom.detector_size;
    const int s_count = geom.ray_samples;
    const double dt = 2.0 / s_count;
    const double t0 = -1.0 + 0.5 * dt;
    const double th = deg2rad(theta_deg);
    const double c = std::cos(th), si = std::sin(th);
    const int enc_dim = 2 * field.encoding.k;

    static thread_local detail::RayScratch scratch;
    Image img(n);
    const int tile_rows = std::max(1, 4096 / s_count / n + 1);
    std::vector<Vec2> warped(static_cast<std::size_t>(n) * tile_rows);

    for (int row0 = 0; row0 < n; row0 += tile_rows) {
        const int rows = std::min(tile_rows, n - row0);
        const int px = rows * n;
        const int pts = px * s_count;
        scratch.z.resize(static_cast<std::size_t>(pts) * enc_dim);
        for (int r = 0; r < rows; ++r) {
            double v = pixel_center(row0 + r, n);
            for (int iu = 0; iu < n; ++iu) {
                Vec2 x{pixel_center(iu, n), v};
                Vec2 w = phi ? warp_coords(*phi, x) : x;
                warped[static_cast<std::size_t>(r) * n + iu] = w;
                Vec3 origin = detail::ray_origin(c, si, w, t0);
                Vec3 step = detail::ray_step(c, si, dt);
                detail::encode_linear_path(
                    field.encoding, origin, step, s_count,
                    scratch.z.data() +
                        (static_cast<std::size_t>(r) * n + iu) * s_count * enc_dim,
                    scratch.phase);
            }
        }
        mlp_forward(field.mlp, scratch.z.data(), pts, scratch.ws);
        const auto& density = scratch.ws.act[field.mlp.arch.depth - 1];
        for (int r = 0; r < rows; ++r)
            for (int iu = 0; iu < n; ++iu) {
                const double* vptr =
                    density.data() + (static_cast<std::size_t>(r) * n + iu) * s_count;
                double acc = 0.0;
                for (int s = 0; s < s_count; ++s) acc += vptr[s];
                img.at(row0 + r, iu) = acc * dt;
            }
    }
    return img;
}

// Full-frame renderings for every tilt; `defs` null or per-tilt identity
// renders the undeformed projections.
inline std::vector<Image> render_projections(const NeuralVolume& field, const DeformationSet* defs,
                                             const TiltGeometry& geom) {
    if (defs && defs->count() != geom.tilt_count())
        throw ShapeError("render_projections: deformation count mismatch");
    std::vector<Image> out;
    out.reserve(geom.tilt_count());
    for (int i = 0; i < geom.tilt_count(); ++i)
        out.push_back(render_frame(field, defs ? &defs->tilts[i] : nullptr, geom.angles_deg[i],
                                   geom));
    return out;
}

// Evaluates the field on the regular n^3 lattice of voxel centers.
inline VolumeGrid voxelize(const NeuralVolume& field, int n) {
    if (n < 2) throw ConfigError("voxelize: n must be >= 2");
    VolumeGrid vol(n);
    const int enc_dim = 2 * field.encoding.k;
    static thread_local detail::RayScratch scratch;
    const double h = 2.0 / n;
    const Vec3 step{h, 0.0, 0.0};
    scratch.z.resize(static_cast<std::size_t>(n) * enc_dim);
    for (int z = 0; z < n; ++z) {
        for (int y = 0; y < n; ++y) {
            Vec3 origin{pixel_center(0, n), pixel_center(y, n), pixel_center(z, n)};
            detail::encode_linear_path(field.encoding, origin, step, n, scratch.z.data(),
                                       scratch.phase);
            mlp_forward(field.mlp, scratch.z.data(), n, scratch.ws);
            const auto& density = scratch.ws.act[field.mlp.arch.depth - 1];
            for (int x = 0; x < n; ++x) vol.at(z, y, x) = density[x];
        }
    }
    return vol;
}

// ---------------------------------------------------------------------------
// train() definition (needs render_loss_batch above).
// ---------------------------------------------------------------------------

inline TrainResult train_from_state(TrainState init, const TrainConfig& cfg,
                                    const TiltSeries& obs,
                                    const std::string& abort_checkpoint_path) {
    obs.validate();
    if (cfg.iterations < 0 || cfg.batch_pixels < 1)
        throw ConfigError("train: iterations must be >= 0 and batch size >= 1");

    TrainResult result;
    result.state = std::move(init);
    TrainState& st = result.state;
    const int m_count = obs.geom.tilt_count();
    const int n = obs.geom.detector_size;
    const bool learn_deform = cfg.mode == TrainMode::Est;

    AdamSet adam;
    AdamHyper vol_h{cfg.lr_volume, 0.9, 0.999, 1e-8};
    AdamHyper glob_h{cfg.lr_global, 0.9, 0.999, 1e-8};
    AdamHyper loc_h{cfg.lr_local, 0.9, 0.999, 1e-8};
    for (const auto& blk : st.field.mlp.blocks) adam.field_states.push_back(AdamState::make(blk, vol_h));
    adam.alpha_states.reserve(m_count);
    adam.tau_states.reserve(m_count);
    adam.gamma_states.resize(m_count);
    for (int i = 0; i < m_count; ++i) {
        adam.alpha_states.push_back(AdamState::make(st.tilts[i].alpha, glob_h));
        adam.tau_states.push_back(AdamState::make(st.tilts[i].tau, glob_h));
        for (const auto& blk : st.tilts[i].net.mlp.blocks)
            adam.gamma_states[i].push_back(AdamState::make(blk, loc_h));
    }

    Rng rng(derive_seed(cfg.seed, 0x7a1));
    BatchGrads grads;

    // frequency curriculum setup
    std::vector<double> freq_norm;
    double freq_full = 0.0;
    if (cfg.freq_ramp_iters > 0) {
        const FourierEncoding& enc = st.field.encoding;
        freq_norm.resize(enc.k);
        for (int k = 0; k < enc.k; ++k) {
            const double* row = enc.b.data() + static_cast<std::size_t>(k) * enc.dim;
            double s2 = 0;
            for (int d = 0; d < enc.dim; ++d) s2 += row[d] * row[d];
            freq_norm[k] = std::sqrt(s2);
            freq_full = std::max(freq_full, freq_norm[k]);
        }
        st.freq_gate.assign(enc.k, 1.0);
    } else {
        st.freq_gate.clear();
    }
    auto update_gate = [&](long iter) {
        if (cfg.freq_ramp_iters <= 0) return;
        double open = cfg.freq_start +
                      (freq_full - cfg.freq_start) *
                          std::min(1.0, static_cast<double>(iter) / cfg.freq_ramp_iters);
        const double band = 1.0;  // cycles/unit of smooth rolloff
        for (std::size_t k = 0; k < freq_norm.size(); ++k) {
            double x = (freq_norm[k] - open) / band;
            if (x <= 0.0)
                st.freq_gate[k] = 1.0;
            else if (x >= 1.0)
                st.freq_gate[k] = 0.0;
            else
                st.freq_gate[k] = 0.5 * (1.0 + std::cos(kPi * x));
        }
    };

    const int window = 100;
    std::vector<double> recent;
    recent.reserve(window);
    double window_sum = 0.0;
    double best_smoothed = std::numeric_limits<double>::infinity();

    const auto wall_start = std::chrono::steady_clock::now();
    auto wall_seconds = [&]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
            .count();
    };

    auto record = [&](long iter, double loss) {
        result.trace.push_back(TrainSample{iter, loss, wall_seconds()});
    };

    for (long iter = 0; iter < cfg.iterations; ++iter) {
        update_gate(iter);
        std::vector<PixelRef> batch = sample_batch(rng, cfg, m_count, n);
        double loss = render_loss_batch(st, obs, std::move(batch), &grads, learn_deform);
        st.loss_history.push_back(loss);

        if (!std::isfinite(loss)) {
            if (!abort_checkpoint_path.empty()) {
                std::ofstream os(abort_checkpoint_path, std::ios::binary);
                if (os) write_field_checkpoint(st.field, os);
            }
            throw NumericsError("train: non-finite loss at iteration " + std::to_string(iter));
        }

        // window-smoothed divergence guard
        if (static_cast<int>(recent.size()) == window) {
            window_sum -= recent[iter % window];
            recent[iter % window] = loss;
        } else {
            recent.push_back(loss);
        }
        window_sum += loss;
        if (static_cast<int>(recent.size()) == window) {
            double smoothed = window_sum / window;
            best_smoothed = std::min(best_smoothed, smoothed);
            if (smoothed > best_smoothed * (1.0 + cfg.divergence_tol)) {
                if (!abort_checkpoint_path.empty()) {
                    std::ofstream os(abort_checkpoint_path, std::ios::binary);
                    if (os) write_field_checkpoint(st.field, os);
                }
                throw NumericsError("train: smoothed loss diverged at iteration " +
                                    std::to_string(iter) + " (smoothed " +
                                    std::to_string(smoothed) + " vs best " +
                                    std::to_string(best_smoothed) + ")");
            }
        }

        for (std::size_t b = 0; b < st.field.mlp.blocks.size(); ++b)
            adam_step(st.field.mlp.blocks[b], grads.psi[b], adam.field_states[b]);
        if (learn_deform) {
            for (int i = 0; i < m_count; ++i) {
                TiltGrads& tg = grads.tilts[i];
                if (tg.gamma.empty() && tg.alpha == 0.0 && tg.tau.x == 0.0 && tg.tau.y == 0.0)
                    continue;  // tilt absent from this batch
                std::vector<double> ga{tg.alpha};
                adam_step(st.tilts[i].alpha, ga, adam.alpha_states[i]);
                std::vector<double> gt{tg.tau.x, tg.tau.y};
                adam_step(st.tilts[i].tau, gt, adam.tau_states[i]);
                if (!tg.gamma.empty() && !st.tilts[i].use_fixed_field &&
                    iter >= cfg.local_warmup_iters)
                    for (std::size_t b = 0; b < st.tilts[i].net.mlp.blocks.size(); ++b)
                        adam_step(st.tilts[i].net.mlp.blocks[b], tg.gamma[b],
                                  adam.gamma_states[i][b]);
            }
        }

        st.iteration = iter + 1;
        if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations) record(iter, loss);
    }
    st.freq_gate.clear();  // final state evaluates with the full band
    return result;
}

inline TrainResult train(const TrainConfig& cfg, const TiltSeries& obs,
                         const std::string& abort_checkpoint_path) {
    return train_from_state(init_train_state(cfg, obs.geom), cfg, obs, abort_checkpoint_path);
}

// ---------------------------------------------------------------------------
// Deformation checkpoint: per-tilt scalars + warp networks.
// ---------------------------------------------------------------------------

inline void write_deformation_checkpoint(const TrainState& st, std::ostream& os) {
    os.write("DTDE", 4);
    binio::put_u32(os, 1);
    binio::put_u32(os, static_cast<std::uint32_t>(st.tilts.size()));
    for (const auto& t : st.tilts) {
        binio::put_f64(os, t.alpha.values[0]);
        binio::put_f64(os, t.tau.values[0]);
        binio::put_f64(os, t.tau.values[1]);
        write_warp_net(t.net, os);
    }
}

inline DeformationSet read_deformation_checkpoint(std::istream& is) {
    char magic[4];
    if (!binio::get_bytes(is, magic, 4) || std::string(magic, 4) != "DTDE")
        throw IoError("deformation checkpoint: bad magic");
    if (binio::get_u32(is, "version") != 1)
        throw IoError("deformation checkpoint: unknown version");
    int m = static_cast<int>(binio::get_u32(is, "tilt count"));
    DeformationSet set;
    set.tilts.reserve(m);
    for (int i = 0; i < m; ++i) {
        TiltDeformation t;
        t.alpha_rad = binio::get_f64(is, "alpha");
        t.tau.x = binio::get_f64(is, "tau.x");
        t.tau.y = binio::get_f64(is, "tau.y");
        t.local = LocalDisplacement::from_net(read_warp_net(is, "gamma[" + std::to_string(i) + "]"));
        set.tilts.push_back(std::move(t));
    }
    return set;
}

}  // namespace dtomo
