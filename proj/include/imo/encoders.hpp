#pragma once

#include "imo/nn.hpp"

namespace imo {

// Multi-scale fundus features: strides {2,4,8}, widths {16,32,C}. Only the
// top level feeds fusion; the lower levels feed the decoder skip pathway.
template <typename T>
struct FundusFeatures {
    Tensor<T> s2, s4;  // pyramid levels below the top
    Tensor<T> top;     // [C, H/8, W/8]
};

// stage = stride-2 3x3 conv -> batch-norm -> ReLU -> pointwise conv
template <typename T>
struct EncoderStage2d {
    Conv2dLayer<T> conv, pw;
    BatchNormLayer<T> bn;

    EncoderStage2d() = default;
    EncoderStage2d(Rng& rng, int cin, int cout)
        : conv(rng, cin, cout, 3, 2, 1, 1, false),  // bias-free into the norm
          pw(rng, cout, cout, 1, 1, 0),
          bn(cout) {}

    std::vector<Tensor<T>> forward(Tape<T>& tape, const std::vector<Tensor<T>>& xs, bool training) {
        std::vector<Tensor<T>> hs;
        hs.reserve(xs.size());
        for (const auto& x : xs) hs.push_back(conv.forward(tape, x));
        hs = bn.forward(tape, hs, training);
        for (auto& h : hs) h = pw.forward(tape, relu(tape, h));
        return hs;
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        conv.collect(r, prefix + ".conv");
        bn.collect(r, prefix + ".bn");
        pw.collect(r, prefix + ".pw");
    }
};

template <typename T>
struct FundusEncoder {
    EncoderStage2d<T> stage1, stage2, stage3;

    FundusEncoder() = default;
    FundusEncoder(Rng& rng, int top_channels)
        : stage1(rng, 3, 16), stage2(rng, 16, 32), stage3(rng, 32, top_channels) {}

    std::vector<FundusFeatures<T>> forward(Tape<T>& tape, const std::vector<Tensor<T>>& imgs,
                                           bool training) {
        for (const auto& img : imgs) {
            if (img.ndim() != 3 || img.dim(0) != 3)
                throw ShapeError("fundus encoder: expected [3,H,W], got " + shape_str(img.shape()));
            if (img.dim(1) % 8 != 0 || img.dim(2) % 8 != 0)
                throw ShapeError("fundus encoder: image size " + shape_str(img.shape()) +
                                 " not divisible by 8");
        }
        auto l1 = stage1.forward(tape, imgs, training);
        auto l2 = stage2.forward(tape, l1, training);
        auto l3 = stage3.forward(tape, l2, training);
        std::vector<FundusFeatures<T>> out(imgs.size());
        for (std::size_t i = 0; i < imgs.size(); ++i) out[i] = {l1[i], l2[i], l3[i]};
        return out;
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        stage1.collect(r, prefix + ".stage1");
        stage2.collect(r, prefix + ".stage2");
        stage3.collect(r, prefix + ".stage3");
    }
};

// Two stride-2 3-D conv+BN+ReLU stages, mean over remaining depth, pointwise
// 2-D projection onto the fused channel count.
template <typename T>
struct OctEncoder {
    Conv3dLayer<T> conv1, conv2;
    BatchNormLayer<T> bn1, bn2;
    Conv2dLayer<T> pw;

    OctEncoder() = default;
    OctEncoder(Rng& rng, int out_channels)
        : conv1(rng, 1, 8, 3, 2, 1, false),
          conv2(rng, 8, 16, 3, 2, 1, false),
          bn1(8),
          bn2(16),
          pw(rng, 16, out_channels, 1, 1, 0) {}

    std::vector<Tensor<T>> forward(Tape<T>& tape, const std::vector<Tensor<T>>& vols,
                                   bool training) {
        for (const auto& v : vols)
            if (v.ndim() != 4 || v.dim(0) != 1)
                throw ShapeError("oct encoder: expected [1,D,H,W], got " + shape_str(v.shape()));
        std::vector<Tensor<T>> hs;
        hs.reserve(vols.size());
        for (const auto& v : vols) hs.push_back(conv1.forward(tape, v));
        hs = bn1.forward(tape, hs, training);
        for (auto& h : hs) h = relu(tape, h);
        for (auto& h : hs) h = conv2.forward(tape, h);
        hs = bn2.forward(tape, hs, training);
        for (auto& h : hs) h = pw.forward(tape, depth_mean(tape, relu(tape, h)));
        return hs;
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        conv1.collect(r, prefix + ".conv1");
        bn1.collect(r, prefix + ".bn1");
        conv2.collect(r, prefix + ".conv2");
        bn2.collect(r, prefix + ".bn2");
        pw.collect(r, prefix + ".pw");
    }
};

}  // namespace imo
