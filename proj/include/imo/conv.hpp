#pragma once

#include "imo/ops.hpp"

namespace imo {

// Cross-correlation on [Cin,H,W] with weight [Cout,Cin/g,kh,kw]. The input is
// copied into a zero-padded buffer so the inner loops stay branch-free; per
// output element the terms accumulate in (ci,ky,kx) order, which the naive
// oracle in the tests mirrors.
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                 std::type_identity_t<const Tensor<T>*> bias,
                 int stride = 1, int padding = 0, int groups = 1) {
    if (x.ndim() != 3) throw ShapeError("conv2d: input must be [Cin,H,W], got " + shape_str(x.shape()));
    if (w.ndim() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin/g,kh,kw], got " + shape_str(w.shape()));
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), cin_g = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (stride < 1 || padding < 0) throw ValidationError("conv2d: bad stride/padding");
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw ShapeError("conv2d: groups " + std::to_string(groups) + " do not divide channels " +
                         std::to_string(cin) + "/" + std::to_string(cout));
    if (cin / groups != cin_g)
        throw ShapeError("conv2d: weight expects " + std::to_string(cin_g) +
                         " channels per group, input has " + std::to_string(cin / groups));
    if (h + 2 * padding < kh || wd + 2 * padding < kw)
        throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " does not fit padded input " + shape_str(x.shape()));
    if (bias && (bias->ndim() != 1 || bias->dim(0) != cout))
        throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()));
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (wd + 2 * padding - kw) / stride + 1;
    const int hp = h + 2 * padding, wp = wd + 2 * padding;

    auto pad = std::make_shared<std::vector<T>>(static_cast<std::size_t>(cin) * hp * wp, T(0));
    {
        auto xv = x.values();
        for (int c = 0; c < cin; ++c)
            for (int i = 0; i < h; ++i) {
                const T* src = &xv[(static_cast<std::size_t>(c) * h + i) * wd];
                T* dst = &(*pad)[(static_cast<std::size_t>(c) * hp + i + padding) * wp + padding];
                std::copy(src, src + wd, dst);
            }
    }

    Tensor<T> out = make_output(tape, {cout, ho, wo}, {&x, &w, bias});
    auto ov = out.values();
    auto wv = w.values();
    const int cpg_out = cout / groups;

#ifdef _OPENMP
#pragma omp parallel for num_threads(kernel_threads()) if (kernel_threads() > 1)
#endif
    for (int co = 0; co < cout; ++co) {
        const int g = co / cpg_out;
        T* outp = &ov[static_cast<std::size_t>(co) * ho * wo];
        const T b = bias ? bias->values()[co] : T(0);
        std::fill(outp, outp + static_cast<std::size_t>(ho) * wo, b);
        for (int cl = 0; cl < cin_g; ++cl) {
            const int ci = g * cin_g + cl;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const T wk = wv[((static_cast<std::size_t>(co) * cin_g + cl) * kh + ky) * kw + kx];
                    for (int y = 0; y < ho; ++y) {
                        const T* row = &(*pad)[(static_cast<std::size_t>(ci) * hp + y * stride + ky) * wp + kx];
                        T* orow = outp + static_cast<std::size_t>(y) * wo;
                        if (stride == 1)
                            for (int xo = 0; xo < wo; ++xo) orow[xo] += wk * row[xo];
                        else
                            for (int xo = 0; xo < wo; ++xo)
                                orow[xo] += wk * row[static_cast<std::size_t>(xo) * stride];
                    }
                }
        }
    }

    if (out.requires_grad()) {
        Tensor<T> xc = x, wc = w, oc = out;
        Tensor<T> bc = bias ? *bias : Tensor<T>();
        tape.record([xc, wc, bc, oc, pad, stride, padding, cin_g, cpg_out, cin, h, wd, cout, kh,
                     kw, ho, wo, hp, wp]() mutable {
            auto go = oc.grad();
            if (bc.defined() && bc.requires_grad()) {
                auto gb = bc.grad();
                for (int co = 0; co < cout; ++co) {
                    T acc = T(0);
                    const T* gp = &go[static_cast<std::size_t>(co) * ho * wo];
                    for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i) acc += gp[i];
                    gb[co] += acc;
                }
            }
            if (wc.requires_grad()) {
                auto gw = wc.grad();
#ifdef _OPENMP
#pragma omp parallel for num_threads(kernel_threads()) if (kernel_threads() > 1)
#endif
                for (int co = 0; co < cout; ++co) {
                    const int g = co / cpg_out;
                    const T* gp = &go[static_cast<std::size_t>(co) * ho * wo];
                    for (int cl = 0; cl < cin_g; ++cl) {
                        const int ci = g * cin_g + cl;
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                T acc = T(0);
                                for (int y = 0; y < ho; ++y) {
                                    const T* row =
                                        &(*pad)[(static_cast<std::size_t>(ci) * hp + y * stride + ky) * wp + kx];
                                    const T* grow = gp + static_cast<std::size_t>(y) * wo;
                                    if (stride == 1)
                                        for (int xo = 0; xo < wo; ++xo) acc += grow[xo] * row[xo];
                                    else
                                        for (int xo = 0; xo < wo; ++xo)
                                            acc += grow[xo] * row[static_cast<std::size_t>(xo) * stride];
                                }
                                gw[((static_cast<std::size_t>(co) * cin_g + cl) * kh + ky) * kw + kx] += acc;
                            }
                    }
                }
            }
            if (xc.requires_grad()) {
                std::vector<T> dpad(static_cast<std::size_t>(cin) * hp * wp, T(0));
                auto wv2 = wc.values();
#ifdef _OPENMP
#pragma omp parallel for num_threads(kernel_threads()) if (kernel_threads() > 1)
#endif
                for (int ci = 0; ci < cin; ++ci) {
                    const int g = ci / cin_g;
                    const int cl = ci % cin_g;
                    for (int co = g * cpg_out; co < (g + 1) * cpg_out; ++co) {
                        const T* gp = &go[static_cast<std::size_t>(co) * ho * wo];
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const T wk =
                                    wv2[((static_cast<std::size_t>(co) * cin_g + cl) * kh + ky) * kw + kx];
                                for (int y = 0; y < ho; ++y) {
                                    T* drow =
                                        &dpad[(static_cast<std::size_t>(ci) * hp + y * stride + ky) * wp + kx];
                                    const T* grow = gp + static_cast<std::size_t>(y) * wo;
                                    if (stride == 1)
                                        for (int xo = 0; xo < wo; ++xo) drow[xo] += wk * grow[xo];
                                    else
                                        for (int xo = 0; xo < wo; ++xo)
                                            drow[static_cast<std::size_t>(xo) * stride] += wk * grow[xo];
                                }
                            }
                    }
                }
                auto gx = xc.grad();
                for (int c = 0; c < cin; ++c)
                    for (int i = 0; i < h; ++i) {
                        const T* src = &dpad[(static_cast<std::size_t>(c) * hp + i + padding) * wp + padding];
                        T* dst = &gx[(static_cast<std::size_t>(c) * h + i) * wd];
                        for (int j = 0; j < wd; ++j) dst[j] += src[j];
                    }
            }
        });
    }
    return out;
}

// 3-D analogue on [Cin,D,H,W]; accumulation order per element is (ci,kz,ky,kx).
template <typename T>
Tensor<T> conv3d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                 std::type_identity_t<const Tensor<T>*> bias,
                 int stride = 1, int padding = 0) {
    if (x.ndim() != 4) throw ShapeError("conv3d: input must be [Cin,D,H,W], got " + shape_str(x.shape()));
    if (w.ndim() != 5) throw ShapeError("conv3d: weight must be [Cout,Cin,kd,kh,kw], got " + shape_str(w.shape()));
    const int cin = x.dim(0), d = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), kd = w.dim(2), kh = w.dim(3), kw = w.dim(4);
    if (w.dim(1) != cin)
        throw ShapeError("conv3d: weight expects " + std::to_string(w.dim(1)) +
                         " input channels, input has " + std::to_string(cin));
    if (stride < 1 || padding < 0) throw ValidationError("conv3d: bad stride/padding");
    if (d + 2 * padding < kd || h + 2 * padding < kh || wd + 2 * padding < kw)
        throw ShapeError("conv3d: kernel does not fit padded input " + shape_str(x.shape()));
    if (bias && (bias->ndim() != 1 || bias->dim(0) != cout))
        throw ShapeError("conv3d: bias shape " + shape_str(bias->shape()));
    const int do_ = (d + 2 * padding - kd) / stride + 1;
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (wd + 2 * padding - kw) / stride + 1;
    const int dp = d + 2 * padding, hp = h + 2 * padding, wp = wd + 2 * padding;

    auto pad = std::make_shared<std::vector<T>>(static_cast<std::size_t>(cin) * dp * hp * wp, T(0));
    {
        auto xv = x.values();
        for (int c = 0; c < cin; ++c)
            for (int z = 0; z < d; ++z)
                for (int i = 0; i < h; ++i) {
                    const T* src = &xv[((static_cast<std::size_t>(c) * d + z) * h + i) * wd];
                    T* dst = &(*pad)[((static_cast<std::size_t>(c) * dp + z + padding) * hp + i + padding) * wp +
                                     padding];
                    std::copy(src, src + wd, dst);
                }
    }

    Tensor<T> out = make_output(tape, {cout, do_, ho, wo}, {&x, &w, bias});
    auto ov = out.values();
    auto wv = w.values();

#ifdef _OPENMP
#pragma omp parallel for num_threads(kernel_threads()) if (kernel_threads() > 1)
#endif
    for (int co = 0; co < cout; ++co) {
        T* outp = &ov[static_cast<std::size_t>(co) * do_ * ho * wo];
        const T b = bias ? bias->values()[co] : T(0);
        std::fill(outp, outp + static_cast<std::size_t>(do_) * ho * wo, b);
        for (int ci = 0; ci < cin; ++ci)
            for (int kz = 0; kz < kd; ++kz)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wk = wv[(((static_cast<std::size_t>(co) * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                        for (int z = 0; z < do_; ++z)
                            for (int y = 0; y < ho; ++y) {
                                const T* row = &(*pad)[((static_cast<std::size_t>(ci) * dp + z * stride + kz) * hp +
                                                        y * stride + ky) * wp + kx];
                                T* orow = outp + (static_cast<std::size_t>(z) * ho + y) * wo;
                                if (stride == 1)
                                    for (int xo = 0; xo < wo; ++xo) orow[xo] += wk * row[xo];
                                else
                                    for (int xo = 0; xo < wo; ++xo)
                                        orow[xo] += wk * row[static_cast<std::size_t>(xo) * stride];
                            }
                    }
    }

    if (out.requires_grad()) {
        Tensor<T> xc = x, wc = w, oc = out;
        Tensor<T> bc = bias ? *bias : Tensor<T>();
        tape.record([xc, wc, bc, oc, pad, stride, padding, cin, d, h, wd, cout, kd, kh, kw, do_,
                     ho, wo, dp, hp, wp]() mutable {
            auto go = oc.grad();
            const std::size_t ovol = static_cast<std::size_t>(do_) * ho * wo;
            if (bc.defined() && bc.requires_grad()) {
                auto gb = bc.grad();
                for (int co = 0; co < cout; ++co) {
                    T acc = T(0);
                    const T* gp = &go[co * ovol];
                    for (std::size_t i = 0; i < ovol; ++i) acc += gp[i];
                    gb[co] += acc;
                }
            }
            if (wc.requires_grad()) {
                auto gw = wc.grad();
#ifdef _OPENMP
#pragma omp parallel for num_threads(kernel_threads()) if (kernel_threads() > 1)
#endif
                for (int co = 0; co < cout; ++co) {
                    const T* gp = &go[co * ovol];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int kz = 0; kz < kd; ++kz)
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    T acc = T(0);
                                    for (int z = 0; z < do_; ++z)
                                        for (int y = 0; y < ho; ++y) {
                                            const T* row =
                                                &(*pad)[((static_cast<std::size_t>(ci) * dp + z * stride + kz) * hp +
                                                         y * stride + ky) * wp + kx];
                                            const T* grow = gp + (static_cast<std::size_t>(z) * ho + y) * wo;
                                            for (int xo = 0; xo < wo; ++xo)
                                                acc += grow[xo] * row[static_cast<std::size_t>(xo) * stride];
                                        }
                                    gw[(((static_cast<std::size_t>(co) * cin + ci) * kd + kz) * kh + ky) * kw + kx] +=
                                        acc;
                                }
                }
            }
            if (xc.requires_grad()) {
                std::vector<T> dpad(static_cast<std::size_t>(cin) * dp * hp * wp, T(0));
                auto wv2 = wc.values();
#ifdef _OPENMP
#pragma omp parallel for num_threads(kernel_threads()) if (kernel_threads() > 1)
#endif
                for (int ci = 0; ci < cin; ++ci)
                    for (int co = 0; co < cout; ++co) {
                        const T* gp = &go[co * ovol];
                        for (int kz = 0; kz < kd; ++kz)
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    const T wk =
                                        wv2[(((static_cast<std::size_t>(co) * cin + ci) * kd + kz) * kh + ky) * kw + kx];
                                    for (int z = 0; z < do_; ++z)
                                        for (int y = 0; y < ho; ++y) {
                                            T* drow =
                                                &dpad[((static_cast<std::size_t>(ci) * dp + z * stride + kz) * hp +
                                                       y * stride + ky) * wp + kx];
                                            const T* grow = gp + (static_cast<std::size_t>(z) * ho + y) * wo;
                                            for (int xo = 0; xo < wo; ++xo)
                                                drow[static_cast<std::size_t>(xo) * stride] += wk * grow[xo];
                                        }
                                }
                    }
                auto gx = xc.grad();
                for (int c = 0; c < cin; ++c)
                    for (int z = 0; z < d; ++z)
                        for (int i = 0; i < h; ++i) {
                            const T* src = &dpad[((static_cast<std::size_t>(c) * dp + z + padding) * hp + i + padding) *
                                                     wp + padding];
                            T* dst = &gx[((static_cast<std::size_t>(c) * d + z) * h + i) * wd];
                            for (int j = 0; j < wd; ++j) dst[j] += src[j];
                        }
            }
        });
    }
    return out;
}

// Batch normalization over a batch of channel-first tensors; statistics are
// per channel over the batch plus all non-channel axes. Normalization uses
// the biased variance; running_var tracks the unbiased one.
template <typename T>
std::vector<Tensor<T>> batch_norm(Tape<T>& tape, const std::vector<Tensor<T>>& xs,
                                  const Tensor<T>& gamma, const Tensor<T>& beta,
                                  Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                                  T momentum = T(0.1), T eps = T(1e-5)) {
    if (xs.empty()) throw ShapeError("batch_norm: empty batch");
    const int c = gamma.dim(0);
    for (const auto& x : xs) {
        if (x.ndim() < 2 || x.dim(0) != c)
            throw ShapeError("batch_norm: input " + shape_str(x.shape()) + " does not match " +
                             std::to_string(c) + " channels");
        require_same_shape(x, xs[0], "batch_norm");
    }
    const std::size_t plane = xs[0].size() / static_cast<std::size_t>(c);
    const std::size_t n = plane * xs.size();

    auto mean_v = std::make_shared<std::vector<T>>(c, T(0));
    auto invstd_v = std::make_shared<std::vector<T>>(c, T(0));
    if (training) {
        for (int ch = 0; ch < c; ++ch) {
            T acc = T(0);
            for (const auto& x : xs) {
                const T* p = &x.values()[ch * plane];
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            const T mu = acc / static_cast<T>(n);
            T var = T(0);
            for (const auto& x : xs) {
                const T* p = &x.values()[ch * plane];
                for (std::size_t i = 0; i < plane; ++i) {
                    const T dvi = p[i] - mu;
                    var += dvi * dvi;
                }
            }
            var /= static_cast<T>(n);
            (*mean_v)[ch] = mu;
            (*invstd_v)[ch] = T(1) / std::sqrt(var + eps);
            const T var_unbiased = n > 1 ? var * static_cast<T>(n) / static_cast<T>(n - 1) : var;
            running_mean.values()[ch] = (T(1) - momentum) * running_mean.values()[ch] + momentum * mu;
            running_var.values()[ch] = (T(1) - momentum) * running_var.values()[ch] + momentum * var_unbiased;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            (*mean_v)[ch] = running_mean.values()[ch];
            (*invstd_v)[ch] = T(1) / std::sqrt(running_var.values()[ch] + eps);
        }
    }

    bool rg = gamma.requires_grad() || beta.requires_grad();
    for (const auto& x : xs) rg = rg || x.requires_grad();
    rg = rg && tape.recording();

    std::vector<Tensor<T>> outs;
    outs.reserve(xs.size());
    for (const auto& x : xs) {
        Tensor<T> out(x.shape(), T(0), rg);
        auto xv = x.values();
        auto ov = out.values();
        for (int ch = 0; ch < c; ++ch) {
            const T mu = (*mean_v)[ch], is = (*invstd_v)[ch];
            const T g = gamma.values()[ch], b = beta.values()[ch];
            for (std::size_t i = 0; i < plane; ++i)
                ov[ch * plane + i] = g * ((xv[ch * plane + i] - mu) * is) + b;
        }
        outs.push_back(out);
    }

    if (rg) {
        std::vector<Tensor<T>> xsc = xs, outc = outs;
        Tensor<T> gc = gamma, bc = beta;
        tape.record([xsc, outc, gc, bc, mean_v, invstd_v, c, plane, n, training]() mutable {
            for (int ch = 0; ch < c; ++ch) {
                const T mu = (*mean_v)[ch], is = (*invstd_v)[ch];
                const T g = gc.values()[ch];
                T s1 = T(0), s2 = T(0);
                for (std::size_t b = 0; b < xsc.size(); ++b) {
                    const T* xp = &xsc[b].values()[ch * plane];
                    const T* gp = &outc[b].grad()[ch * plane];
                    for (std::size_t i = 0; i < plane; ++i) {
                        s1 += gp[i];
                        s2 += gp[i] * ((xp[i] - mu) * is);
                    }
                }
                if (gc.requires_grad()) gc.grad()[ch] += s2;
                if (bc.requires_grad()) bc.grad()[ch] += s1;
                const T inv_n = T(1) / static_cast<T>(n);
                for (std::size_t b = 0; b < xsc.size(); ++b) {
                    if (!xsc[b].requires_grad()) continue;
                    const T* xp = &xsc[b].values()[ch * plane];
                    const T* gp = &outc[b].grad()[ch * plane];
                    T* dxp = &xsc[b].grad()[ch * plane];
                    if (training) {
                        for (std::size_t i = 0; i < plane; ++i) {
                            const T xhat = (xp[i] - mu) * is;
                            dxp[i] += g * is * (gp[i] - s1 * inv_n - xhat * s2 * inv_n);
                        }
                    } else {
                        for (std::size_t i = 0; i < plane; ++i) dxp[i] += g * is * gp[i];
                    }
                }
            }
        });
    }
    return outs;
}

}  // namespace imo
