#include "imo/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace imo {

void PhantomConfig::validate() const {
    if (image_size < 8 || image_size % 8 != 0)
        throw ValidationError("phantom: image_size must be a positive multiple of 8");
    if (volume_d < 4 || volume_h < 4 || volume_w < 4)
        throw ValidationError("phantom: volume dims too small");
    if (!(disc_r_min > 0.0 && disc_r_min <= disc_r_max && disc_r_max < 0.5))
        throw ValidationError("phantom: disc radius range must satisfy 0 < min <= max < 0.5");
    if (!(cdr_min > 0.0 && cdr_min <= cdr_max && cdr_max < 1.0))
        throw ValidationError("phantom: cdr range must lie inside (0,1)");
    if (!(noise_amp >= 0.0 && noise_amp <= 0.2))
        throw ValidationError("phantom: noise_amp must lie in [0, 0.2]");
    if (!(grade_t1 > 0.0 && grade_t1 < grade_t2 && grade_t2 < 1.0))
        throw ValidationError("phantom: thresholds must satisfy 0 < t1 < t2 < 1");
}

int derive_grade(double cdr, const PhantomConfig& cfg) {
    if (!(cdr > 0.0 && cdr < 1.0))
        throw ValidationError("derive_grade: cdr " + std::to_string(cdr) + " outside (0,1)");
    if (cdr < cfg.grade_t1) return 0;
    if (cdr < cfg.grade_t2) return 1;
    return 2;
}

namespace {

struct Ellipse {
    double cx, cy, rx, ry;
    // pixel-center inclusion rule
    bool contains(double px, double py) const {
        const double dx = (px - cx) / rx, dy = (py - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
    }
    double radial2(double px, double py) const {
        const double dx = (px - cx) / rx, dy = (py - cy) / ry;
        return dx * dx + dy * dy;
    }
};

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

template <typename T>
PhantomSample<T> generate_sample(const PhantomConfig& cfg, int index) {
    cfg.validate();
    if (index < 0) throw ValidationError("generate_sample: index must be >= 0");
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(index)));

    const int n = cfg.image_size;
    // geometry draws come first so the pixel noise stream cannot shift it
    const double cdr = rng.uniform(cfg.cdr_min, cfg.cdr_max);
    const double rx = rng.uniform(cfg.disc_r_min, cfg.disc_r_max) * n;
    const double ry = rx * rng.uniform(0.85, 1.0);
    const double cx = (0.5 + rng.uniform(-0.08, 0.08)) * n;
    const double cy = (0.5 + rng.uniform(-0.08, 0.08)) * n;
    const double phase_x = rng.uniform(0.0, 6.283185307179586);
    const double phase_y = rng.uniform(0.0, 6.283185307179586);

    const Ellipse disc{cx, cy, rx, ry};
    const Ellipse cup{cx, cy, cdr * rx, cdr * ry};

    PhantomSample<T> s;
    s.cdr = cdr;
    s.grade = derive_grade(cdr, cfg);
    s.mask = Tensor<T>({n, n});
    s.fundus = Tensor<T>({3, n, n});
    auto mv = s.mask.values();
    auto fv = s.fundus.values();
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const std::size_t i = static_cast<std::size_t>(y) * n + x;
            double r, g, b;
            if (cup.contains(px, py)) {
                mv[i] = T(2);
                r = 0.95, g = 0.88, b = 0.62;
            } else if (disc.contains(px, py)) {
                mv[i] = T(1);
                r = 0.86, g = 0.72, b = 0.45;
            } else {
                mv[i] = T(0);
                const double tex = 0.06 * std::sin(phase_x + 7.0 * px / n) +
                                   0.06 * std::sin(phase_y + 5.0 * py / n);
                r = 0.52 + tex;
                g = 0.30 + 0.5 * tex;
                b = 0.16 + 0.25 * tex;
            }
            fv[0 * plane + i] = static_cast<T>(clamp01(r + cfg.noise_amp * rng.uniform(-1.0, 1.0)));
            fv[1 * plane + i] = static_cast<T>(clamp01(g + cfg.noise_amp * rng.uniform(-1.0, 1.0)));
            fv[2 * plane + i] = static_cast<T>(clamp01(b + cfg.noise_amp * rng.uniform(-1.0, 1.0)));
        }

    // OCT grid maps onto image coordinates by uniform scaling
    const int d = cfg.volume_d, vh = cfg.volume_h, vw = cfg.volume_w;
    const double sy = static_cast<double>(n) / vh, sx = static_cast<double>(n) / vw;
    s.oct = Tensor<T>({1, d, vh, vw});
    auto ov = s.oct.values();
    const double base_depth = 0.30 * d;
    for (int y = 0; y < vh; ++y)
        for (int x = 0; x < vw; ++x) {
            const double px = (x + 0.5) * sx, py = (y + 0.5) * sy;
            const double r2 = cup.radial2(px, py);
            // excavation deepens with the CDR, strongest at the cup center
            const double excav =
                r2 <= 1.0 ? cdr * 0.45 * d * (1.0 - std::sqrt(r2)) : 0.0;
            const double surface = base_depth + excav;
            for (int z = 0; z < d; ++z) {
                const double dz = z - surface;
                double v = 0.75 * std::exp(-dz * dz / 8.0);
                if (dz > 0) v += 0.22 * std::exp(-dz / 5.0);
                v += 0.04;
                const std::size_t vi =
                    (static_cast<std::size_t>(z) * vh + y) * vw + x;
                ov[vi] = static_cast<T>(clamp01(v + cfg.noise_amp * rng.uniform(-1.0, 1.0)));
            }
        }
    return s;
}

template <typename T>
Tensor<T> encode_mask_onehot(const Tensor<T>& mask) {
    if (mask.ndim() != 2) throw ShapeError("encode_mask_onehot: expected [H,W] labels");
    const int h = mask.dim(0), w = mask.dim(1);
    Tensor<T> out({3, h, w});
    auto mv = mask.values();
    auto ov = out.values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i) {
        const int label = static_cast<int>(mv[i]);
        if (label < 0 || label > 2 || static_cast<T>(label) != mv[i])
            throw ValidationError("encode_mask_onehot: unknown label " + std::to_string(mv[i]));
        ov[static_cast<std::size_t>(label) * plane + i] = T(1);
    }
    return out;
}

template <typename T>
Tensor<T> decode_mask_onehot(const Tensor<T>& onehot) {
    if (onehot.ndim() != 3 || onehot.dim(0) != 3)
        throw ShapeError("decode_mask_onehot: expected [3,H,W]");
    const int h = onehot.dim(1), w = onehot.dim(2);
    Tensor<T> out({h, w});
    auto xv = onehot.values();
    auto ov = out.values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        T bv = xv[i];
        for (int c = 1; c < 3; ++c)
            if (xv[static_cast<std::size_t>(c) * plane + i] > bv) {
                bv = xv[static_cast<std::size_t>(c) * plane + i];
                best = c;
            }
        ov[i] = static_cast<T>(best);
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> split_dataset(int n, double fraction,
                                                            std::uint64_t seed) {
    if (n < 2) throw ValidationError("split_dataset: need at least 2 samples");
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ValidationError("split_dataset: fraction must lie in (0,1)");
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(0, i)]);
    const int n_test = static_cast<int>(std::lround(n * (1.0 - fraction)));
    std::vector<int> test(idx.begin(), idx.begin() + n_test);
    std::vector<int> train(idx.begin() + n_test, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {train, test};
}

template PhantomSample<float> generate_sample<float>(const PhantomConfig&, int);
template PhantomSample<double> generate_sample<double>(const PhantomConfig&, int);
template Tensor<float> encode_mask_onehot<float>(const Tensor<float>&);
template Tensor<double> encode_mask_onehot<double>(const Tensor<double>&);
template Tensor<float> decode_mask_onehot<float>(const Tensor<float>&);
template Tensor<double> decode_mask_onehot<double>(const Tensor<double>&);

}  // namespace imo
