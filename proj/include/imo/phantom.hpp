#pragma once

#include <utility>

#include "imo/tensor.hpp"

namespace imo {

// Synthetic stand-in for paired fundus/OCT cases: two concentric noisy
// ellipses (disc, cup) over a textured background, an OCT-like volume whose
// excavation depth grows with the cup-to-disc ratio, the exact rendered mask,
// and a grade derived from the CDR by thresholding.
struct PhantomConfig {
    int image_size = 64;
    int volume_d = 16, volume_h = 32, volume_w = 32;
    double disc_r_min = 0.15, disc_r_max = 0.30;  // fraction of image size
    double cdr_min = 0.2, cdr_max = 0.95;
    double noise_amp = 0.1;  // allowed range [0, 0.2]
    double grade_t1 = 0.5, grade_t2 = 0.7;
    std::uint64_t seed = 1;

    void validate() const;
};

template <typename T>
struct PhantomSample {
    Tensor<T> fundus;  // [3,H,W] in [0,1]
    Tensor<T> oct;     // [1,D,H',W'] in [0,1]
    Tensor<T> mask;    // [H,W], labels 0=background 1=disc rim 2=cup
    int grade = 0;
    double cdr = 0.0;
};

// 0 iff cdr < t1, 1 iff t1 <= cdr < t2, 2 iff cdr >= t2
int derive_grade(double cdr, const PhantomConfig& cfg);

template <typename T>
PhantomSample<T> generate_sample(const PhantomConfig& cfg, int index);

// one-hot over the three classes; channel sum is 1 per pixel
template <typename T>
Tensor<T> encode_mask_onehot(const Tensor<T>& mask);

template <typename T>
Tensor<T> decode_mask_onehot(const Tensor<T>& onehot);

// Deterministic shuffle split; |test| = round(n * (1 - fraction)). Returns
// (train, test), each sorted ascending.
std::pair<std::vector<int>, std::vector<int>> split_dataset(int n, double fraction,
                                                            std::uint64_t seed);

}  // namespace imo
