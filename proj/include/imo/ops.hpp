#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <type_traits>
#include <vector>

#include "imo/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace imo {

template <typename T>
inline bool any_requires_grad(std::initializer_list<const Tensor<T>*> ins) {
    for (auto* p : ins)
        if (p && p->defined() && p->requires_grad()) return true;
    return false;
}

template <typename T>
Tensor<T> make_output(Tape<T>& tape, Shape shape, std::initializer_list<const Tensor<T>*> ins) {
    return Tensor<T>(std::move(shape), T(0), tape.recording() && any_requires_grad<T>(ins));
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out = make_output(tape, a.shape(), {&a, &b});
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (out.requires_grad()) {
        Tensor<T> ac = a, bc = b, oc = out;
        tape.record([ac, bc, oc]() mutable {
            auto g = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out = make_output(tape, a.shape(), {&a, &b});
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (out.requires_grad()) {
        Tensor<T> ac = a, bc = b, oc = out;
        tape.record([ac, bc, oc]() mutable {
            auto g = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out = make_output(tape, a.shape(), {&a, &b});
    auto av = a.values(), bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (out.requires_grad()) {
        Tensor<T> ac = a, bc = b, oc = out;
        tape.record([ac, bc, oc]() mutable {
            auto g = oc.grad();
            auto av2 = ac.values(), bv2 = bc.values();
            if (ac.requires_grad()) {
                auto ga = ac.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T c) {
    Tensor<T> out = make_output(tape, x.shape(), {&x});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c * xv[i];
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, c]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = make_output(tape, x.shape(), {&x});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > T(0) ? xv[i] : T(0);
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            auto g = oc.grad();
            auto xv2 = xc.values();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv2[i] > T(0)) gx[i] += g[i];
        });
    }
    return out;
}

// Saturates at the ends but never produces NaN.
template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = make_output(tape, x.shape(), {&x});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        T v = xv[i];
        if (v >= T(0)) {
            ov[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            T e = std::exp(v);
            ov[i] = e / (T(1) + e);
        }
    }
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            auto g = oc.grad();
            auto y = oc.values();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
        });
    }
    return out;
}

template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = make_output(tape, x.shape(), {&x});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(xv[i]);
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            auto g = oc.grad();
            auto xv2 = xc.values();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xv2[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reciprocal(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = make_output(tape, x.shape(), {&x});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = T(1) / xv[i];
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            auto g = oc.grad();
            auto y = oc.values();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i] * y[i] * y[i];
        });
    }
    return out;
}

// Gradient passes through inside [lo,hi] and is cut outside.
template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& x, T lo, T hi) {
    Tensor<T> out = make_output(tape, x.shape(), {&x});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(std::max(xv[i], lo), hi);
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, lo, hi]() mutable {
            auto g = oc.grad();
            auto xv2 = xc.values();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv2[i] >= lo && xv2[i] <= hi) gx[i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = make_output(tape, {1}, {&x});
    auto xv = x.values();
    T acc = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
    out.values()[0] = acc;
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            T g = oc.grad()[0];
            auto gx = xc.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
    Tensor<T> out = make_output(tape, {1}, {&x});
    auto xv = x.values();
    T acc = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
    const T inv = T(1) / static_cast<T>(xv.size());
    out.values()[0] = acc * inv;
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, inv]() mutable {
            T g = oc.grad()[0] * inv;
            auto gx = xc.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

template <typename T>
Tensor<T> pick(Tape<T>& tape, const Tensor<T>& x, std::size_t index) {
    if (index >= x.size())
        throw ValidationError("pick: index " + std::to_string(index) + " out of range for " +
                              shape_str(x.shape()));
    Tensor<T> out = make_output(tape, {1}, {&x});
    out.values()[0] = x.values()[index];
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, index]() mutable { xc.grad()[index] += oc.grad()[0]; });
    }
    return out;
}

// Max-subtracted for stability; 1-D only.
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x) {
    if (x.ndim() != 1) throw ShapeError("softmax: expected 1-d input, got " + shape_str(x.shape()));
    Tensor<T> out = make_output(tape, x.shape(), {&x});
    auto xv = x.values();
    auto ov = out.values();
    T m = xv[0];
    for (std::size_t i = 1; i < xv.size(); ++i) m = std::max(m, xv[i]);
    T s = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        ov[i] = std::exp(xv[i] - m);
        s += ov[i];
    }
    const T inv = T(1) / s;
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= inv;
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc]() mutable {
            auto g = oc.grad();
            auto y = oc.values();
            auto gx = xc.grad();
            T dot = T(0);
            for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - dot);
        });
    }
    return out;
}

// Spatial mean per channel: [C,H,W] -> [C].
template <typename T>
Tensor<T> gap(Tape<T>& tape, const Tensor<T>& x) {
    if (x.ndim() != 3) throw ShapeError("gap: expected [C,H,W], got " + shape_str(x.shape()));
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Tensor<T> out = make_output(tape, {c}, {&x});
    auto xv = x.values();
    auto ov = out.values();
    const T inv = T(1) / static_cast<T>(plane);
    for (int ch = 0; ch < c; ++ch) {
        T acc = T(0);
        const T* p = &xv[ch * plane];
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        ov[ch] = acc * inv;
    }
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, c, plane, inv]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (int ch = 0; ch < c; ++ch) {
                const T gc = g[ch] * inv;
                T* p = &gx[ch * plane];
                for (std::size_t i = 0; i < plane; ++i) p[i] += gc;
            }
        });
    }
    return out;
}

// Mean over the channel axis: [C,h,w] -> [1,h,w].
template <typename T>
Tensor<T> channel_mean(Tape<T>& tape, const Tensor<T>& x) {
    if (x.ndim() != 3) throw ShapeError("channel_mean: expected [C,h,w], got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out = make_output(tape, {1, h, w}, {&x});
    auto xv = x.values();
    auto ov = out.values();
    const T inv = T(1) / static_cast<T>(c);
    for (std::size_t i = 0; i < plane; ++i) {
        T acc = T(0);
        for (int ch = 0; ch < c; ++ch) acc += xv[ch * plane + i];
        ov[i] = acc * inv;
    }
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, c, plane, inv]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < plane; ++i) {
                const T gi = g[i] * inv;
                for (int ch = 0; ch < c; ++ch) gx[ch * plane + i] += gi;
            }
        });
    }
    return out;
}

// Max over the channel axis: [C,h,w] -> [1,h,w]; ties keep the lowest channel.
template <typename T>
Tensor<T> channel_max(Tape<T>& tape, const Tensor<T>& x) {
    if (x.ndim() != 3) throw ShapeError("channel_max: expected [C,h,w], got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out = make_output(tape, {1, h, w}, {&x});
    auto xv = x.values();
    auto ov = out.values();
    auto argmax = std::make_shared<std::vector<int>>(plane, 0);
    for (std::size_t i = 0; i < plane; ++i) {
        T best = xv[i];
        int bc = 0;
        for (int ch = 1; ch < c; ++ch) {
            const T v = xv[ch * plane + i];
            if (v > best) {
                best = v;
                bc = ch;
            }
        }
        ov[i] = best;
        (*argmax)[i] = bc;
    }
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, argmax, plane]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < plane; ++i) gx[(*argmax)[i] * plane + i] += g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// broadcasts (per-channel vector and per-pixel map over [C,h,w]; the only
// broadcasting the engine supports)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> scale_channels(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gate) {
    if (x.ndim() != 3 || gate.ndim() != 1 || gate.dim(0) != x.dim(0))
        throw ShapeError("scale_channels: got " + shape_str(x.shape()) + " and " +
                         shape_str(gate.shape()));
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Tensor<T> out = make_output(tape, x.shape(), {&x, &gate});
    auto xv = x.values();
    auto gv = gate.values();
    auto ov = out.values();
    for (int ch = 0; ch < c; ++ch) {
        const T g = gv[ch];
        for (std::size_t i = 0; i < plane; ++i) ov[ch * plane + i] = g * xv[ch * plane + i];
    }
    if (out.requires_grad()) {
        Tensor<T> xc = x, gc = gate, oc = out;
        tape.record([xc, gc, oc, c, plane]() mutable {
            auto go = oc.grad();
            auto xv2 = xc.values();
            auto gv2 = gc.values();
            for (int ch = 0; ch < c; ++ch) {
                if (xc.requires_grad()) {
                    auto gx = xc.grad();
                    const T g = gv2[ch];
                    for (std::size_t i = 0; i < plane; ++i)
                        gx[ch * plane + i] += g * go[ch * plane + i];
                }
                if (gc.requires_grad()) {
                    T acc = T(0);
                    for (std::size_t i = 0; i < plane; ++i)
                        acc += go[ch * plane + i] * xv2[ch * plane + i];
                    gc.grad()[ch] += acc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale_spatial(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& map) {
    if (x.ndim() != 3 || map.ndim() != 3 || map.dim(0) != 1 || map.dim(1) != x.dim(1) ||
        map.dim(2) != x.dim(2))
        throw ShapeError("scale_spatial: got " + shape_str(x.shape()) + " and " +
                         shape_str(map.shape()));
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Tensor<T> out = make_output(tape, x.shape(), {&x, &map});
    auto xv = x.values();
    auto mv = map.values();
    auto ov = out.values();
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) ov[ch * plane + i] = xv[ch * plane + i] * mv[i];
    if (out.requires_grad()) {
        Tensor<T> xc = x, mc = map, oc = out;
        tape.record([xc, mc, oc, c, plane]() mutable {
            auto go = oc.grad();
            auto xv2 = xc.values();
            auto mv2 = mc.values();
            if (xc.requires_grad()) {
                auto gx = xc.grad();
                for (int ch = 0; ch < c; ++ch)
                    for (std::size_t i = 0; i < plane; ++i)
                        gx[ch * plane + i] += go[ch * plane + i] * mv2[i];
            }
            if (mc.requires_grad()) {
                auto gm = mc.grad();
                for (std::size_t i = 0; i < plane; ++i) {
                    T acc = T(0);
                    for (int ch = 0; ch < c; ++ch)
                        acc += go[ch * plane + i] * xv2[ch * plane + i];
                    gm[i] += acc;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_channel_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v) {
    if (x.ndim() != 3 || v.ndim() != 1 || v.dim(0) != x.dim(0))
        throw ShapeError("add_channel_bias: got " + shape_str(x.shape()) + " and " +
                         shape_str(v.shape()));
    const int c = x.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Tensor<T> out = make_output(tape, x.shape(), {&x, &v});
    auto xv = x.values();
    auto vv = v.values();
    auto ov = out.values();
    for (int ch = 0; ch < c; ++ch) {
        const T b = vv[ch];
        for (std::size_t i = 0; i < plane; ++i) ov[ch * plane + i] = xv[ch * plane + i] + b;
    }
    if (out.requires_grad()) {
        Tensor<T> xc = x, vc = v, oc = out;
        tape.record([xc, vc, oc, c, plane]() mutable {
            auto go = oc.grad();
            if (xc.requires_grad()) {
                auto gx = xc.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (vc.requires_grad()) {
                auto gv = vc.grad();
                for (int ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    for (std::size_t i = 0; i < plane; ++i) acc += go[ch * plane + i];
                    gv[ch] += acc;
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

// one channel plane of [C,h,w] as [1,h,w]
template <typename T>
Tensor<T> channel_slice(Tape<T>& tape, const Tensor<T>& x, int c) {
    if (x.ndim() != 3 || c < 0 || c >= x.dim(0))
        throw ShapeError("channel_slice: channel " + std::to_string(c) + " of " +
                         shape_str(x.shape()));
    const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
    Tensor<T> out = make_output(tape, {1, x.dim(1), x.dim(2)}, {&x});
    auto xv = x.values();
    auto ov = out.values();
    std::copy(xv.begin() + c * plane, xv.begin() + (c + 1) * plane, ov.begin());
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, c, plane]() mutable {
            auto g = oc.grad();
            auto gx = xc.grad();
            for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>& tape, const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const int h = xs[0].dim(1), w = xs[0].dim(2);
    int ctot = 0;
    for (const auto& x : xs) {
        if (x.ndim() != 3 || x.dim(1) != h || x.dim(2) != w)
            throw ShapeError("concat_channels: incompatible input " + shape_str(x.shape()));
        ctot += x.dim(0);
    }
    bool rg = false;
    for (const auto& x : xs) rg = rg || x.requires_grad();
    Tensor<T> out(Shape{ctot, h, w}, T(0), tape.recording() && rg);
    auto ov = out.values();
    std::size_t off = 0;
    for (const auto& x : xs) {
        auto xv = x.values();
        std::copy(xv.begin(), xv.end(), ov.begin() + off);
        off += xv.size();
    }
    if (out.requires_grad()) {
        std::vector<Tensor<T>> ins = xs;
        Tensor<T> oc = out;
        tape.record([ins, oc]() mutable {
            auto go = oc.grad();
            std::size_t pos = 0;
            for (auto& x : ins) {
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[pos + i];
                }
                pos += x.size();
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2d(Tape<T>& tape, const Tensor<T>& x, int factor) {
    if (x.ndim() != 3) throw ShapeError("upsample_nearest2d: expected [C,h,w]");
    if (factor < 1) throw ValidationError("upsample_nearest2d: factor must be >= 1");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor<T> out = make_output(tape, {c, h * factor, w * factor}, {&x});
    auto xv = x.values();
    auto ov = out.values();
    const int ho = h * factor, wo = w * factor;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y) {
            const T* src = &xv[(static_cast<std::size_t>(ch) * h + y / factor) * w];
            T* dst = &ov[(static_cast<std::size_t>(ch) * ho + y) * wo];
            for (int xo = 0; xo < wo; ++xo) dst[xo] = src[xo / factor];
        }
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, c, h, w, factor]() mutable {
            auto go = oc.grad();
            auto gx = xc.grad();
            const int ho = h * factor, wo = w * factor;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < ho; ++y) {
                    const T* src = &go[(static_cast<std::size_t>(ch) * ho + y) * wo];
                    T* dst = &gx[(static_cast<std::size_t>(ch) * h + y / factor) * w];
                    for (int xo = 0; xo < wo; ++xo) dst[xo / factor] += src[xo];
                }
        });
    }
    return out;
}

// Strided subsampling: out[c,y,x] = in[c, y*s, x*s].
template <typename T>
Tensor<T> downsample_stride2d(Tape<T>& tape, const Tensor<T>& x, int s) {
    if (x.ndim() != 3) throw ShapeError("downsample_stride2d: expected [C,h,w]");
    if (s < 1) throw ValidationError("downsample_stride2d: stride must be >= 1");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const int ho = (h + s - 1) / s, wo = (w + s - 1) / s;
    Tensor<T> out = make_output(tape, {c, ho, wo}, {&x});
    auto xv = x.values();
    auto ov = out.values();
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            for (int xo = 0; xo < wo; ++xo)
                ov[(static_cast<std::size_t>(ch) * ho + y) * wo + xo] =
                    xv[(static_cast<std::size_t>(ch) * h + y * s) * w + xo * s];
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, c, h, w, ho, wo, s]() mutable {
            auto go = oc.grad();
            auto gx = xc.grad();
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < ho; ++y)
                    for (int xo = 0; xo < wo; ++xo)
                        gx[(static_cast<std::size_t>(ch) * h + y * s) * w + xo * s] +=
                            go[(static_cast<std::size_t>(ch) * ho + y) * wo + xo];
        });
    }
    return out;
}

// Mean over the depth axis: [C,D,H,W] -> [C,H,W].
template <typename T>
Tensor<T> depth_mean(Tape<T>& tape, const Tensor<T>& x) {
    if (x.ndim() != 4) throw ShapeError("depth_mean: expected [C,D,H,W], got " + shape_str(x.shape()));
    const int c = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> out = make_output(tape, {c, h, w}, {&x});
    auto xv = x.values();
    auto ov = out.values();
    const T inv = T(1) / static_cast<T>(d);
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) {
            T acc = T(0);
            for (int z = 0; z < d; ++z)
                acc += xv[(static_cast<std::size_t>(ch) * d + z) * plane + i];
            ov[ch * plane + i] = acc * inv;
        }
    if (out.requires_grad()) {
        Tensor<T> xc = x, oc = out;
        tape.record([xc, oc, c, d, plane, inv]() mutable {
            auto go = oc.grad();
            auto gx = xc.grad();
            for (int ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < plane; ++i) {
                    const T g = go[ch * plane + i] * inv;
                    for (int z = 0; z < d; ++z)
                        gx[(static_cast<std::size_t>(ch) * d + z) * plane + i] += g;
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// affine map: out[m] = b[m] + sum_k w[m,k] x[k]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                 std::type_identity_t<const Tensor<T>*> bias) {
    if (x.ndim() != 1 || w.ndim() != 2 || w.dim(1) != x.dim(0))
        throw ShapeError("linear: got x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
    const int m = w.dim(0), k = w.dim(1);
    if (bias && (bias->ndim() != 1 || bias->dim(0) != m))
        throw ShapeError("linear: bias shape " + shape_str(bias->shape()));
    Tensor<T> out = make_output(tape, {m}, {&x, &w, bias});
    auto xv = x.values();
    auto wv = w.values();
    auto ov = out.values();
    for (int i = 0; i < m; ++i) {
        T acc = bias ? bias->values()[i] : T(0);
        const T* row = &wv[static_cast<std::size_t>(i) * k];
        for (int j = 0; j < k; ++j) acc += row[j] * xv[j];
        ov[i] = acc;
    }
    if (out.requires_grad()) {
        Tensor<T> xc = x, wc = w, oc = out;
        Tensor<T> bc = bias ? *bias : Tensor<T>();
        tape.record([xc, wc, bc, oc, m, k]() mutable {
            auto go = oc.grad();
            auto xv2 = xc.values();
            auto wv2 = wc.values();
            if (wc.requires_grad()) {
                auto gw = wc.grad();
                for (int i = 0; i < m; ++i) {
                    const T g = go[i];
                    T* row = &gw[static_cast<std::size_t>(i) * k];
                    for (int j = 0; j < k; ++j) row[j] += g * xv2[j];
                }
            }
            if (xc.requires_grad()) {
                auto gx = xc.grad();
                for (int i = 0; i < m; ++i) {
                    const T g = go[i];
                    const T* row = &wv2[static_cast<std::size_t>(i) * k];
                    for (int j = 0; j < k; ++j) gx[j] += g * row[j];
                }
            }
            if (bc.defined() && bc.requires_grad()) {
                auto gb = bc.grad();
                for (int i = 0; i < m; ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

// mean squared error over all elements
template <typename T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> d = sub(tape, a, b);
    return mean(tape, mul(tape, d, d));
}

}  // namespace imo
