#pragma once

// Independent reference implementations used only by the tests. They stay
// deliberately naive (scalar loops, no padding buffers) so they cannot share
// a bug with the kernels they check. Accumulation per output element runs in
// (ci,ky,kx) order starting from the bias, mirroring the documented kernel
// order so exact comparison is meaningful.

#include <vector>

#include "imo/tensor.hpp"

namespace oracle {

template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, int cin, int h, int w, const std::vector<T>& wts,
                      int cout, int kh, int kw, const T* bias, int stride, int padding,
                      int groups) {
    const int cin_g = cin / groups;
    const int cpg_out = cout / groups;
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    std::vector<T> out(static_cast<std::size_t>(cout) * ho * wo, T(0));
    for (int co = 0; co < cout; ++co) {
        const int g = co / cpg_out;
        for (int y = 0; y < ho; ++y)
            for (int xo = 0; xo < wo; ++xo) {
                T acc = bias ? bias[co] : T(0);
                for (int cl = 0; cl < cin_g; ++cl) {
                    const int ci = g * cin_g + cl;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const int iy = y * stride + ky - padding;
                            const int ix = xo * stride + kx - padding;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            acc += wts[((static_cast<std::size_t>(co) * cin_g + cl) * kh + ky) * kw + kx] *
                                   x[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
                        }
                }
                out[(static_cast<std::size_t>(co) * ho + y) * wo + xo] = acc;
            }
    }
    return out;
}

template <typename T>
std::vector<T> conv3d(const std::vector<T>& x, int cin, int d, int h, int w,
                      const std::vector<T>& wts, int cout, int kd, int kh, int kw, const T* bias,
                      int stride, int padding) {
    const int do_ = (d + 2 * padding - kd) / stride + 1;
    const int ho = (h + 2 * padding - kh) / stride + 1;
    const int wo = (w + 2 * padding - kw) / stride + 1;
    std::vector<T> out(static_cast<std::size_t>(cout) * do_ * ho * wo, T(0));
    for (int co = 0; co < cout; ++co)
        for (int z = 0; z < do_; ++z)
            for (int y = 0; y < ho; ++y)
                for (int xo = 0; xo < wo; ++xo) {
                    T acc = bias ? bias[co] : T(0);
                    for (int ci = 0; ci < cin; ++ci)
                        for (int kz = 0; kz < kd; ++kz)
                            for (int ky = 0; ky < kh; ++ky)
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int iz = z * stride + kz - padding;
                                    const int iy = y * stride + ky - padding;
                                    const int ix = xo * stride + kx - padding;
                                    if (iz < 0 || iz >= d || iy < 0 || iy >= h || ix < 0 || ix >= w)
                                        continue;
                                    acc += wts[(((static_cast<std::size_t>(co) * cin + ci) * kd + kz) * kh + ky) *
                                                   kw + kx] *
                                           x[((static_cast<std::size_t>(ci) * d + iz) * h + iy) * w + ix];
                                }
                    out[((static_cast<std::size_t>(co) * do_ + z) * ho + y) * wo + xo] = acc;
                }
    return out;
}

template <typename T>
imo::Tensor<T> random_tensor(imo::Rng& rng, imo::Shape shape, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(imo::numel(shape));
    for (auto& e : v) e = static_cast<T>(rng.uniform(lo, hi));
    return imo::Tensor<T>(std::move(shape), std::move(v));
}

// scalar-loop channel gate: x * sigmoid(w2 relu(w1 gap(x))), all by hand
template <typename T>
std::vector<T> channel_gate(const std::vector<T>& x, int c, int h, int w,
                            const std::vector<T>& w1, int cr, const std::vector<T>& w2) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<T> pooled(c, T(0));
    for (int ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < plane; ++i) pooled[ch] += x[ch * plane + i];
        pooled[ch] /= static_cast<T>(plane);
    }
    std::vector<T> mid(cr, T(0));
    for (int i = 0; i < cr; ++i) {
        for (int j = 0; j < c; ++j) mid[i] += w1[i * c + j] * pooled[j];
        if (mid[i] < 0) mid[i] = 0;
    }
    std::vector<T> gate(c, T(0));
    for (int i = 0; i < c; ++i) {
        T a = 0;
        for (int j = 0; j < cr; ++j) a += w2[i * cr + j] * mid[j];
        gate[i] = T(1) / (T(1) + std::exp(-a));
    }
    std::vector<T> out(x.size());
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = x[ch * plane + i] * gate[ch];
    return out;
}

// brute-force confusion-matrix metrics for three classes
struct ClsOracle {
    double precision, recall, f1, accuracy;
};
inline ClsOracle classification(const std::vector<int>& pred, const std::vector<int>& truth) {
    long m[3][3] = {};
    for (std::size_t i = 0; i < pred.size(); ++i) m[truth[i]][pred[i]]++;
    double ps = 0, rs = 0, fs = 0;
    long correct = 0;
    for (int k = 0; k < 3; ++k) {
        long tp = m[k][k], colsum = 0, rowsum = 0;
        for (int j = 0; j < 3; ++j) {
            colsum += m[j][k];
            rowsum += m[k][j];
        }
        correct += tp;
        double p = colsum ? double(tp) / colsum : 0.0;
        double r = rowsum ? double(tp) / rowsum : 0.0;
        ps += p;
        rs += r;
        fs += (p + r > 0) ? 2 * p * r / (p + r) : 0.0;
    }
    return {ps / 3, rs / 3, fs / 3, double(correct) / pred.size()};
}

}  // namespace oracle
