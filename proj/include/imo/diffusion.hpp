#pragma once

#include <functional>

#include "imo/nn.hpp"

namespace imo {

// beta/alpha/alpha_bar tables; alpha_bar[0] = 1 by convention so t = 0 means
// "no noise" everywhere below.
struct NoiseSchedule {
    int steps = 0;                  // T
    std::vector<double> beta;       // beta[i-1] for step i in 1..T
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // cumulative product, index 0..T

    static NoiseSchedule linear(int T, double beta_start = 1e-4, double beta_end = 0.02);
    static NoiseSchedule from_betas(std::vector<double> betas);

    double abar(int t) const;
};

template <typename T>
void check_timestep(const NoiseSchedule& sched, int t, const char* op) {
    if (t < 0 || t > sched.steps)
        throw ValidationError(std::string(op) + ": timestep " + std::to_string(t) +
                              " outside [0," + std::to_string(sched.steps) + "]");
}

// x_t = sqrt(abar_t) x_0 + sqrt(1-abar_t) eps
template <typename T>
Tensor<T> forward_noise(Tape<T>& tape, const Tensor<T>& x0, int t, const Tensor<T>& eps,
                        const NoiseSchedule& sched) {
    check_timestep<T>(sched, t, "forward_noise");
    require_same_shape(x0, eps, "forward_noise");
    const double ab = sched.abar(t);
    return add(tape, scale(tape, x0, static_cast<T>(std::sqrt(ab))),
               scale(tape, eps, static_cast<T>(std::sqrt(1.0 - ab))));
}

// Inversion of the forward formula, clamped to [-1.5, 1.5] to bound early
// reconstructions when abar_t is small.
template <typename T>
Tensor<T> predict_x0(Tape<T>& tape, const Tensor<T>& xt, int t, const Tensor<T>& eps_hat,
                     const NoiseSchedule& sched) {
    check_timestep<T>(sched, t, "predict_x0");
    require_same_shape(xt, eps_hat, "predict_x0");
    const double ab = sched.abar(t);
    if (ab <= 0.0) throw ValidationError("predict_x0: alpha_bar must be positive");
    Tensor<T> raw = scale(tape, sub(tape, xt, scale(tape, eps_hat, static_cast<T>(std::sqrt(1.0 - ab)))),
                          static_cast<T>(1.0 / std::sqrt(ab)));
    return clamp(tape, raw, T(-1.5), T(1.5));
}

// Deterministic (eta = 0) reverse update t -> t_prev.
template <typename T>
Tensor<T> ddim_step(Tape<T>& tape, const Tensor<T>& xt, int t, int t_prev,
                    const Tensor<T>& eps_hat, const NoiseSchedule& sched) {
    check_timestep<T>(sched, t, "ddim_step");
    if (t_prev < 0 || t_prev >= t)
        throw ValidationError("ddim_step: need 0 <= t_prev < t, got t_prev=" +
                              std::to_string(t_prev) + " t=" + std::to_string(t));
    Tensor<T> x0_hat = predict_x0(tape, xt, t, eps_hat, sched);
    const double ab_prev = sched.abar(t_prev);
    return add(tape, scale(tape, x0_hat, static_cast<T>(std::sqrt(ab_prev))),
               scale(tape, eps_hat, static_cast<T>(std::sqrt(1.0 - ab_prev))));
}

// ---------------------------------------------------------------------------
// mask <-> latent codec ("analog bits": one-hot scaled to {-1,+1})
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> encode_mask_latent(const Tensor<T>& mask, int num_classes = 3) {
    if (mask.ndim() != 2) throw ShapeError("encode_mask_latent: expected [H,W] labels");
    const int h = mask.dim(0), w = mask.dim(1);
    Tensor<T> out({num_classes, h, w}, T(-1));
    auto mv = mask.values();
    auto ov = out.values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i) {
        const int label = static_cast<int>(mv[i]);
        if (label < 0 || label >= num_classes || static_cast<T>(label) != mv[i])
            throw ValidationError("encode_mask_latent: label " + std::to_string(mv[i]) +
                                  " outside {0.." + std::to_string(num_classes - 1) + "}");
        ov[static_cast<std::size_t>(label) * plane + i] = T(1);
    }
    return out;
}

// Per-pixel argmax; ties break toward the lowest class index. Total on any
// real-valued latent.
template <typename T>
Tensor<T> decode_mask_latent(const Tensor<T>& latent) {
    if (latent.ndim() != 3) throw ShapeError("decode_mask_latent: expected [K,H,W]");
    const int k = latent.dim(0), h = latent.dim(1), w = latent.dim(2);
    Tensor<T> out({h, w}, T(0));
    auto lv = latent.values();
    auto ov = out.values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        T bv = lv[i];
        for (int c = 1; c < k; ++c) {
            const T v = lv[static_cast<std::size_t>(c) * plane + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        ov[i] = static_cast<T>(best);
    }
    return out;
}

// Reverse DDIM trajectory from seeded unit Gaussian noise down a uniform
// timestep ladder. eps_fn sees (tape, x_t, t) and returns estimated noise.
template <typename T>
Tensor<T> ddim_sample(const std::function<Tensor<T>(Tape<T>&, const Tensor<T>&, int)>& eps_fn,
                      const Shape& latent_shape, const NoiseSchedule& sched, int steps,
                      std::uint64_t seed) {
    if (steps < 1) throw ValidationError("ddim_sample: steps must be >= 1");
    if (steps > sched.steps)
        throw ValidationError("ddim_sample: steps " + std::to_string(steps) + " exceed T=" +
                              std::to_string(sched.steps));
    if (sched.steps % steps != 0)
        throw ValidationError("ddim_sample: steps must divide T for a uniform ladder");
    Rng rng(seed);
    Tensor<T> x(latent_shape);
    for (auto& v : x.values()) v = static_cast<T>(rng.normal());
    const int stride = sched.steps / steps;
    Tape<T> tape(false);
    for (int k = steps; k >= 1; --k) {
        const int t = k * stride;
        const int t_prev = (k - 1) * stride;
        Tensor<T> eps = eps_fn(tape, x, t);
        x = ddim_step(tape, x, t, t_prev, eps, sched);
    }
    return x;
}

// ---------------------------------------------------------------------------
// conditional noise-prediction network (small U-shape)
// ---------------------------------------------------------------------------

// 64-dim sinusoidal embedding of an integer timestep; first half sines,
// second half cosines, geometric frequencies.
template <typename T>
Tensor<T> timestep_embedding(int t, int dim) {
    Tensor<T> out({dim});
    auto ov = out.values();
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        ov[i] = static_cast<T>(std::sin(t * freq));
        ov[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return out;
}

struct EpsNetConfig {
    int latent_channels = 3;
    int cond_channels = 64;    // fused feature channels at the encoder grid
    int cond_proj = 16;        // fused channels after the 1x1 reduction
    int skip1_channels = 16;   // fundus pyramid at stride 2
    int skip2_channels = 32;   // fundus pyramid at stride 4
    int w0 = 12, w1 = 16, w2 = 24;
    int temb_dim = 64;
};

// Input: concat(x_t, upsampled projected fused features); fundus pyramid
// levels join the down path at matching resolutions; the timestep embedding
// is projected per stage and added as a channel bias.
template <typename T>
struct EpsNet {
    EpsNetConfig cfg;
    Conv2dLayer<T> cond_proj;          // 1x1, cond_channels -> cond_proj
    Conv2dLayer<T> e0, e1, e1f, e2, e2f, mid, d1, d0, out;
    LinearLayer<T> t0, t1, t2, tm, td1, td0;

    EpsNet() = default;
    EpsNet(Rng& rng, const EpsNetConfig& c) : cfg(c) {
        cond_proj = Conv2dLayer<T>(rng, c.cond_channels, c.cond_proj, 1, 1, 0);
        e0 = Conv2dLayer<T>(rng, c.latent_channels + c.cond_proj, c.w0, 3, 1, 1);
        e1 = Conv2dLayer<T>(rng, c.w0, c.w1, 3, 2, 1);
        e1f = Conv2dLayer<T>(rng, c.w1 + c.skip1_channels, c.w1, 3, 1, 1);
        e2 = Conv2dLayer<T>(rng, c.w1, c.w2, 3, 2, 1);
        e2f = Conv2dLayer<T>(rng, c.w2 + c.skip2_channels, c.w2, 3, 1, 1);
        mid = Conv2dLayer<T>(rng, c.w2, c.w2, 3, 1, 1);
        d1 = Conv2dLayer<T>(rng, c.w2 + c.w1, c.w1, 3, 1, 1);
        d0 = Conv2dLayer<T>(rng, c.w1 + c.w0, c.w0, 3, 1, 1);
        out = Conv2dLayer<T>(rng, c.w0, c.latent_channels, 1, 1, 0);
        t0 = LinearLayer<T>(rng, c.temb_dim, c.w0);
        t1 = LinearLayer<T>(rng, c.temb_dim, c.w1);
        t2 = LinearLayer<T>(rng, c.temb_dim, c.w2);
        tm = LinearLayer<T>(rng, c.temb_dim, c.w2);
        td1 = LinearLayer<T>(rng, c.temb_dim, c.w1);
        td0 = LinearLayer<T>(rng, c.temb_dim, c.w0);
    }

    // xt: [3,H,W]; fused: [C,h,w] with H = h * factor; skips at strides 2,4.
    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& xt, int t, const Tensor<T>& fused,
                      const Tensor<T>& skip1, const Tensor<T>& skip2) const {
        const int latent_h = xt.dim(1);
        if (latent_h % fused.dim(1) != 0)
            throw ShapeError("eps-net: fused grid " + shape_str(fused.shape()) +
                             " does not divide latent " + shape_str(xt.shape()));
        const int factor = latent_h / fused.dim(1);
        Tensor<T> emb = timestep_embedding<T>(t, cfg.temb_dim);

        Tensor<T> cond = upsample_nearest2d(tape, cond_proj.forward(tape, fused), factor);
        Tensor<T> h0 = e0.forward(tape, concat_channels<T>(tape, {xt, cond}));
        h0 = relu(tape, add_channel_bias(tape, h0, t0.forward(tape, emb)));

        Tensor<T> h1 = e1.forward(tape, h0);
        h1 = relu(tape, add_channel_bias(tape, h1, t1.forward(tape, emb)));
        h1 = relu(tape, e1f.forward(tape, concat_channels<T>(tape, {h1, skip1})));

        Tensor<T> h2 = e2.forward(tape, h1);
        h2 = relu(tape, add_channel_bias(tape, h2, t2.forward(tape, emb)));
        h2 = relu(tape, e2f.forward(tape, concat_channels<T>(tape, {h2, skip2})));

        Tensor<T> m = mid.forward(tape, h2);
        m = relu(tape, add_channel_bias(tape, m, tm.forward(tape, emb)));

        Tensor<T> u1 = d1.forward(tape, concat_channels<T>(tape, {upsample_nearest2d(tape, m, 2), h1}));
        u1 = relu(tape, add_channel_bias(tape, u1, td1.forward(tape, emb)));

        Tensor<T> u0 = d0.forward(tape, concat_channels<T>(tape, {upsample_nearest2d(tape, u1, 2), h0}));
        u0 = relu(tape, add_channel_bias(tape, u0, td0.forward(tape, emb)));

        return out.forward(tape, u0);
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        cond_proj.collect(r, prefix + ".cond_proj");
        e0.collect(r, prefix + ".e0");
        e1.collect(r, prefix + ".e1");
        e1f.collect(r, prefix + ".e1f");
        e2.collect(r, prefix + ".e2");
        e2f.collect(r, prefix + ".e2f");
        mid.collect(r, prefix + ".mid");
        d1.collect(r, prefix + ".d1");
        d0.collect(r, prefix + ".d0");
        out.collect(r, prefix + ".out");
        t0.collect(r, prefix + ".t0");
        t1.collect(r, prefix + ".t1");
        t2.collect(r, prefix + ".t2");
        tm.collect(r, prefix + ".tm");
        td1.collect(r, prefix + ".td1");
        td0.collect(r, prefix + ".td0");
    }
};

}  // namespace imo
