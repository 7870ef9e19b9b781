#pragma once

#include <functional>

#include "imo/tensor.hpp"

namespace imo {

// Central finite-difference check of reverse-mode gradients. `f` rebuilds the
// graph from its input on the given tape and must be deterministic; run it in
// 64-bit mode (h around 1e-3) for meaningful tolerances. Returns the max over
// coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
template <typename T>
double grad_check(const std::function<Tensor<T>(Tape<T>&, const Tensor<T>&)>& f,
                  const Tensor<T>& x0, T h) {
    Tensor<T> x = x0.clone();
    x.set_requires_grad(true);
    Tape<T> tape;
    Tensor<T> loss = f(tape, x);
    tape.backward(loss);
    std::vector<T> analytic(x.grad().begin(), x.grad().end());

    auto eval_at = [&](std::size_t i, T v) {
        Tensor<T> xp = x0.clone();
        xp.values()[i] = v;
        Tape<T> t(false);
        return static_cast<double>(f(t, xp).item());
    };

    double max_rel = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const T base = x0.values()[i];
        const double lp = eval_at(i, base + h);
        const double lm = eval_at(i, base - h);
        const double numeric = (lp - lm) / (2.0 * static_cast<double>(h));
        const double analytic_i = static_cast<double>(analytic[i]);
        const double rel =
            std::abs(analytic_i - numeric) / (std::abs(analytic_i) + std::abs(numeric) + 1e-12);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace imo
