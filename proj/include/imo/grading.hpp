#pragma once

#include "imo/cmfa.hpp"

namespace imo {

// Squeeze-and-excitation gate; same functional form as the fusion channel
// gate, independent parameters.
template <typename T>
struct SeBlock {
    LinearLayer<T> fc1, fc2;

    SeBlock() = default;
    SeBlock(Rng& rng, int c, int reduction)
        : fc1(rng, c, c / reduction, false), fc2(rng, c / reduction, c, false) {}

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return channel_attention(tape, x, fc1.w, fc2.w);
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        fc1.collect(r, prefix + ".fc1");
        fc2.collect(r, prefix + ".fc2");
    }
};

// Depthwise separable conv -> BN -> ReLU -> SE -> GAP -> FC -> ReLU -> FC ->
// softmax over the three stages.
template <typename T>
struct GradingHead {
    Conv2dLayer<T> dw;  // depthwise 3x3
    Conv2dLayer<T> pw;  // pointwise mixer
    BatchNormLayer<T> bn;
    SeBlock<T> se;
    LinearLayer<T> fc1, fc2;

    GradingHead() = default;
    GradingHead(Rng& rng, int c, int se_reduction)
        : dw(rng, c, c, 3, 1, 1, c, false),
          pw(rng, c, c, 1, 1, 0, 1, false),
          bn(c),
          se(rng, c, se_reduction),
          fc1(rng, c, c / 2),
          fc2(rng, c / 2, 3) {}

    std::vector<Tensor<T>> forward(Tape<T>& tape, const std::vector<Tensor<T>>& fused,
                                   bool training) {
        std::vector<Tensor<T>> hs;
        hs.reserve(fused.size());
        for (const auto& x : fused) hs.push_back(pw.forward(tape, dw.forward(tape, x)));
        hs = bn.forward(tape, hs, training);
        for (auto& h : hs) {
            h = se.forward(tape, relu(tape, h));
            h = relu(tape, fc1.forward(tape, gap(tape, h)));
            h = softmax(tape, fc2.forward(tape, h));
        }
        return hs;
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        dw.collect(r, prefix + ".dw");
        pw.collect(r, prefix + ".pw");
        bn.collect(r, prefix + ".bn");
        se.collect(r, prefix + ".se");
        fc1.collect(r, prefix + ".fc1");
        fc2.collect(r, prefix + ".fc2");
    }
};

}  // namespace imo
