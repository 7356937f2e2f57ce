#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "vmt/backbone.hpp"
#include "vmt/lora.hpp"
#include "vmt/motion_enhancer.hpp"
#include "vmt/rng.hpp"
#include "vmt/training.hpp"

namespace vmt {

struct SampleConfig {
    int num_steps = 30;
    double guidance_scale = 12.0;
    double eta = 0.0;
    std::optional<int> frames;  // unset: the backbone's native clip length
    double fps = 8.0;
    std::uint64_t seed = 0;

    /// Clip length the full-scale deployment profile uses when frames is
    /// left unset there.
    static constexpr int kFullScaleFrames = 24;

    void validate(const DiffusionSchedule& schedule) const;
    int resolved_frames(const BackboneConfig& backbone) const {
        return frames.value_or(backbone.frames);
    }
};

/// Classifier-free guidance: eps_u + s (eps_c - eps_u).
Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s);

/// Descending timestep subsequence with uniform stride, ending at 0.
std::vector<int> ddim_timesteps(int total_timesteps, int num_steps);

/// One DDIM update from t to t_prev. t_prev == kCleanStep denotes the final
/// hop onto the clean latent (alpha_bar = 1), where the update reduces to the
/// z0 prediction. eta > 0 adds the DDIM stochastic term and requires an rng.
inline constexpr int kCleanStep = -1;
Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, double eta,
                 const DiffusionSchedule& schedule, Rng* noise_rng = nullptr);

/// z0 estimate implied by a noise prediction at alpha_bar.
Tensor ddim_predict_clean(const Tensor& z_t, const Tensor& eps_hat, double alpha_bar);

struct GenerateOptions {
    const MotionCheckpoint* motion = nullptr;
    const AdapterSet* subject_spatial = nullptr;
    std::optional<int> verb_index_override;
    const VerbTagger* tagger = nullptr;  // defaults to the rule-based tagger
    /// When set, captures per-site activations of the first denoising step's
    /// conditional forward.
    ActivationProbe* first_step_probe = nullptr;
};

/// DDIM generation with classifier-free guidance. Loads the motion
/// checkpoint's temporal adapters and cached residual (the appearance
/// injector stays inactive at inference) plus optional subject spatial
/// adapters; with eta = 0 the output is a pure function of weights, prompt,
/// seed and config.
VideoClip generate(const Backbone& model, const std::string& prompt, const SampleConfig& cfg,
                   const GenerateOptions& opts = {});

}  // namespace vmt
