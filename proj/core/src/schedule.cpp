#include "vmt/schedule.hpp"

#include <cmath>

#include "vmt/errors.hpp"

namespace vmt {

DiffusionSchedule DiffusionSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw ValidationError("schedule: T must be >= 1");
    DiffusionSchedule s;
    s.total_timesteps = T;
    s.betas.resize(static_cast<std::size_t>(T));
    s.alphas_cumprod.resize(static_cast<std::size_t>(T));
    double cumprod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double beta =
            T == 1 ? beta_start
                   : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                         static_cast<double>(T - 1);
        s.betas[static_cast<std::size_t>(t)] = beta;
        cumprod *= 1.0 - beta;
        s.alphas_cumprod[static_cast<std::size_t>(t)] = cumprod;
    }
    s.validate();
    return s;
}

double DiffusionSchedule::alpha_bar(int t) const {
    if (t < 0 || t >= total_timesteps) {
        throw ValidationError("schedule: timestep " + std::to_string(t) + " out of [0, " +
                              std::to_string(total_timesteps) + ")");
    }
    return alphas_cumprod[static_cast<std::size_t>(t)];
}

void DiffusionSchedule::validate() const {
    if (static_cast<int>(betas.size()) != total_timesteps ||
        static_cast<int>(alphas_cumprod.size()) != total_timesteps) {
        throw ValidationError("schedule: size mismatch");
    }
    double prev = 1.0;
    for (int t = 0; t < total_timesteps; ++t) {
        const double beta = betas[static_cast<std::size_t>(t)];
        if (!(beta > 0.0 && beta < 1.0)) throw ValidationError("schedule: beta out of (0,1)");
        const double ab = alphas_cumprod[static_cast<std::size_t>(t)];
        if (!(ab < prev)) throw ValidationError("schedule: alpha_bar must be strictly decreasing");
        prev = ab;
    }
}

Tensor q_sample(const Tensor& z0, double alpha_bar, const Tensor& eps) {
    if (!z0.same_shape(eps)) {
        throw ShapeError("q_sample: noise shape " + eps.shape_str() + " != latent shape " +
                         z0.shape_str());
    }
    const double a = std::sqrt(alpha_bar);
    const double b = std::sqrt(1.0 - alpha_bar);
    Tensor out = scale(z0, a);
    out.add_scaled(eps, b);
    return out;
}

LatentVideo add_noise(const LatentVideo& z0, int t, const Tensor& eps,
                      const DiffusionSchedule& schedule) {
    LatentVideo out;
    out.latents = q_sample(z0.latents, schedule.alpha_bar(t), eps);
    out.schedule_timestep = t;
    return out;
}

}  // namespace vmt
