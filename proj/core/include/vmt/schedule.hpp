#pragma once

#include <vector>

#include "vmt/tensor.hpp"
#include "vmt/video.hpp"

namespace vmt {

/// Variance-preserving forward-diffusion schedule.
struct DiffusionSchedule {
    int total_timesteps = 0;
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;

    /// Linear betas from beta_start to beta_end over T steps.
    static DiffusionSchedule linear(int T = 1000, double beta_start = 1e-4,
                                    double beta_end = 2e-2);

    double alpha_bar(int t) const;
    void validate() const;
};

/// z_t = sqrt(alpha_bar) z0 + sqrt(1 - alpha_bar) eps.
Tensor q_sample(const Tensor& z0, double alpha_bar, const Tensor& eps);

/// Schedule-indexed q-sample; throws on out-of-range timestep.
LatentVideo add_noise(const LatentVideo& z0, int t, const Tensor& eps,
                      const DiffusionSchedule& schedule);

}  // namespace vmt
