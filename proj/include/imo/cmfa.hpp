#pragma once

#include "imo/nn.hpp"

namespace imo {

// Channel gate: x scaled by sigmoid(W2 relu(W1 gap(x))). Free-function form
// so the scalar-loop oracles can drive it with explicit weights.
template <typename T>
Tensor<T> channel_attention(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w1,
                            const Tensor<T>& w2) {
    Tensor<T> g = sigmoid(tape, linear(tape, relu(tape, linear(tape, gap(tape, x), w1, nullptr)),
                                       w2, nullptr));
    return scale_channels(tape, x, g);
}

// Cross-modal fusion: per-modality channel attention, additive fusion, a
// spatial gate from channel-wise mean/max maps, then pointwise projection
// with ReLU. The two gate maps are bias-free; everything else carries biases.
template <typename T>
struct Cmfa {
    LinearLayer<T> f_w1, f_w2;  // fundus gate
    LinearLayer<T> o_w1, o_w2;  // oct gate
    Conv2dLayer<T> spatial;     // 2 -> 1, 7x7, padding 3
    Conv2dLayer<T> proj;        // 1x1, C -> C

    Cmfa() = default;
    Cmfa(Rng& rng, int c, int reduction)
        : f_w1(rng, c, c / reduction, false),
          f_w2(rng, c / reduction, c, false),
          o_w1(rng, c, c / reduction, false),
          o_w2(rng, c / reduction, c, false),
          spatial(rng, 2, 1, 7, 1, 3),
          proj(rng, c, c, 1, 1, 0) {}

    Tensor<T> attend_fundus(Tape<T>& tape, const Tensor<T>& x) const {
        return channel_attention(tape, x, f_w1.w, f_w2.w);
    }
    Tensor<T> attend_oct(Tape<T>& tape, const Tensor<T>& x) const {
        return channel_attention(tape, x, o_w1.w, o_w2.w);
    }

    // spatial gate over an already-summed map
    Tensor<T> spatial_gate(Tape<T>& tape, const Tensor<T>& fused_sum) const {
        Tensor<T> maps = concat_channels<T>(
            tape, {channel_mean(tape, fused_sum), channel_max(tape, fused_sum)});
        return sigmoid(tape, spatial.forward(tape, maps));
    }

    Tensor<T> spatial_fuse(Tape<T>& tape, const Tensor<T>& xf_att, const Tensor<T>& xo_att) const {
        require_same_shape(xf_att, xo_att, "spatial_fuse");
        Tensor<T> fused_sum = add(tape, xf_att, xo_att);
        return scale_spatial(tape, fused_sum, spatial_gate(tape, fused_sum));
    }

    Tensor<T> fuse_out(Tape<T>& tape, const Tensor<T>& f) const {
        return relu(tape, proj.forward(tape, f));
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& xf, const Tensor<T>& xo) const {
        require_same_shape(xf, xo, "cmfa");
        return fuse_out(tape, spatial_fuse(tape, attend_fundus(tape, xf), attend_oct(tape, xo)));
    }

    // single-modality arm: the fused sum reduces to the fundus attention map
    Tensor<T> forward_fundus_only(Tape<T>& tape, const Tensor<T>& xf) const {
        Tensor<T> att = attend_fundus(tape, xf);
        return fuse_out(tape, scale_spatial(tape, att, spatial_gate(tape, att)));
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        f_w1.collect(r, prefix + ".f_w1");
        f_w2.collect(r, prefix + ".f_w2");
        o_w1.collect(r, prefix + ".o_w1");
        o_w2.collect(r, prefix + ".o_w2");
        spatial.collect(r, prefix + ".spatial");
        proj.collect(r, prefix + ".proj");
    }
};

// no-CMFA arm: channel concat then pointwise projection with ReLU
template <typename T>
struct ConcatFusion {
    Conv2dLayer<T> proj;  // 1x1, 2C -> C

    ConcatFusion() = default;
    ConcatFusion(Rng& rng, int c) : proj(rng, 2 * c, c, 1, 1, 0) {}

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& xf, const Tensor<T>& xo) const {
        require_same_shape(xf, xo, "concat_fallback");
        return relu(tape, proj.forward(tape, concat_channels<T>(tape, {xf, xo})));
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        proj.collect(r, prefix + ".proj");
    }
};

}  // namespace imo
