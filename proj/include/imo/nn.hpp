#pragma once

#include <string>

#include "imo/conv.hpp"
#include "imo/ops.hpp"

namespace imo {

// Named view over a model's tensors. Learnable entries feed the optimizer;
// non-learnable ones (running statistics) still checkpoint.
template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T>* tensor;
    bool learnable;
};

template <typename T>
class ParamRegistry {
public:
    void add(std::string name, Tensor<T>& t, bool learnable = true) {
        for (const auto& e : entries_)
            if (e.name == name) throw ValidationError("duplicate parameter name: " + name);
        entries_.push_back({std::move(name), &t, learnable});
    }

    const std::vector<ParamEntry<T>>& entries() const { return entries_; }

    void zero_grad() {
        for (auto& e : entries_)
            if (e.learnable) e.tensor->zero_grad();
    }

private:
    std::vector<ParamEntry<T>> entries_;
};

// fan-in-scaled uniform init, bound = sqrt(1/fan_in)
template <typename T>
Tensor<T> uniform_init(Rng& rng, Shape shape, double bound, bool learnable = true) {
    std::vector<T> v(numel(shape));
    for (auto& e : v) e = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>(std::move(shape), std::move(v), learnable);
}

template <typename T>
struct Conv2dLayer {
    Tensor<T> w, b;
    int stride = 1, padding = 0, groups = 1;
    bool has_bias = true;

    Conv2dLayer() = default;
    Conv2dLayer(Rng& rng, int cin, int cout, int k, int stride_, int padding_, int groups_ = 1,
                bool bias = true)
        : stride(stride_), padding(padding_), groups(groups_), has_bias(bias) {
        const double bound = std::sqrt(1.0 / ((cin / groups_) * k * k));
        w = uniform_init<T>(rng, {cout, cin / groups_, k, k}, bound);
        if (bias) b = uniform_init<T>(rng, {cout}, bound);
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return conv2d(tape, x, w, has_bias ? &b : nullptr, stride, padding, groups);
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".w", w);
        if (has_bias) r.add(prefix + ".b", b);
    }
};

template <typename T>
struct Conv3dLayer {
    Tensor<T> w, b;
    int stride = 1, padding = 0;
    bool has_bias = true;

    Conv3dLayer() = default;
    Conv3dLayer(Rng& rng, int cin, int cout, int k, int stride_, int padding_, bool bias = true)
        : stride(stride_), padding(padding_), has_bias(bias) {
        const double bound = std::sqrt(1.0 / (cin * k * k * k));
        w = uniform_init<T>(rng, {cout, cin, k, k, k}, bound);
        if (bias) b = uniform_init<T>(rng, {cout}, bound);
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return conv3d(tape, x, w, has_bias ? &b : nullptr, stride, padding);
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".w", w);
        if (has_bias) r.add(prefix + ".b", b);
    }
};

template <typename T>
struct LinearLayer {
    Tensor<T> w, b;
    bool has_bias = true;

    LinearLayer() = default;
    LinearLayer(Rng& rng, int in, int out, bool bias = true) : has_bias(bias) {
        const double bound = std::sqrt(1.0 / in);
        w = uniform_init<T>(rng, {out, in}, bound);
        if (bias) b = uniform_init<T>(rng, {out}, bound);
    }

    Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
        return linear(tape, x, w, has_bias ? &b : nullptr);
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".w", w);
        if (has_bias) r.add(prefix + ".b", b);
    }
};

template <typename T>
struct BatchNormLayer {
    Tensor<T> gamma, beta, running_mean, running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    BatchNormLayer() = default;
    explicit BatchNormLayer(int c)
        : gamma({c}, T(1), true),
          beta({c}, T(0), true),
          running_mean({c}, T(0)),
          running_var({c}, T(1)) {}

    std::vector<Tensor<T>> forward(Tape<T>& tape, const std::vector<Tensor<T>>& xs,
                                   bool training) {
        return batch_norm(tape, xs, gamma, beta, running_mean, running_var, training, momentum, eps);
    }

    void collect(ParamRegistry<T>& r, const std::string& prefix) {
        r.add(prefix + ".gamma", gamma);
        r.add(prefix + ".beta", beta);
        r.add(prefix + ".running_mean", running_mean, false);
        r.add(prefix + ".running_var", running_var, false);
    }
};

}  // namespace imo
