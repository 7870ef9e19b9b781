#include <cmath>

#include "imo/diffusion.hpp"

namespace imo {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ValidationError("noise schedule: need at least one step");
    NoiseSchedule s;
    s.steps = static_cast<int>(betas.size());
    s.beta = std::move(betas);
    s.alpha.resize(s.beta.size());
    s.alpha_bar.assign(s.beta.size() + 1, 1.0);
    for (std::size_t i = 0; i < s.beta.size(); ++i) {
        if (!(s.beta[i] > 0.0 && s.beta[i] < 1.0))
            throw ValidationError("noise schedule: beta[" + std::to_string(i + 1) +
                                  "]=" + std::to_string(s.beta[i]) + " outside (0,1)");
        s.alpha[i] = 1.0 - s.beta[i];
        s.alpha_bar[i + 1] = s.alpha_bar[i] * s.alpha[i];
    }
    return s;
}

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw ValidationError("noise schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ValidationError("noise schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> betas(T);
    for (int i = 0; i < T; ++i)
        betas[i] = T == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * i / static_cast<double>(T - 1);
    return from_betas(std::move(betas));
}

double NoiseSchedule::abar(int t) const {
    if (t < 0 || t > steps)
        throw ValidationError("noise schedule: timestep " + std::to_string(t) + " outside [0," +
                              std::to_string(steps) + "]");
    return alpha_bar[static_cast<std::size_t>(t)];
}

}  // namespace imo
