#include "vmt/sampling.hpp"

#include <cmath>

#include "vmt/errors.hpp"

namespace vmt {

void SampleConfig::validate(const DiffusionSchedule& schedule) const {
    if (num_steps < 1 || num_steps > schedule.total_timesteps) {
        throw ValidationError("sample config: num_steps must be in [1, T]");
    }
    if (guidance_scale < 0) throw ValidationError("sample config: guidance_scale must be >= 0");
    if (eta < 0 || eta > 1) throw ValidationError("sample config: eta must be in [0, 1]");
    if (frames && *frames < 1) throw ValidationError("sample config: frames must be >= 1");
    if (fps <= 0) throw ValidationError("sample config: fps must be > 0");
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s) {
    if (!eps_uncond.same_shape(eps_cond)) throw ShapeError("cfg_combine: shape mismatch");
    // Exact at the endpoints: s=0 is the unconditional branch, s=1 the
    // conditional one.
    if (s == 0.0) return eps_uncond;
    if (s == 1.0) return eps_cond;
    Tensor out = eps_uncond;
    Tensor diff = sub(eps_cond, eps_uncond);
    out.add_scaled(diff, s);
    return out;
}

std::vector<int> ddim_timesteps(int total_timesteps, int num_steps) {
    if (num_steps < 1 || num_steps > total_timesteps) {
        throw ValidationError("ddim_timesteps: num_steps out of range");
    }
    std::vector<int> ts(static_cast<std::size_t>(num_steps));
    if (num_steps == 1) {
        ts[0] = total_timesteps - 1;
        return ts;
    }
    for (int i = 0; i < num_steps; ++i) {
        const double frac = static_cast<double>(num_steps - 1 - i) / (num_steps - 1);
        ts[static_cast<std::size_t>(i)] =
            static_cast<int>(std::lround(frac * (total_timesteps - 1)));
    }
    return ts;
}

Tensor ddim_predict_clean(const Tensor& z_t, const Tensor& eps_hat, double alpha_bar) {
    Tensor out = z_t;
    out.add_scaled(eps_hat, -std::sqrt(1.0 - alpha_bar));
    return scale(out, 1.0 / std::sqrt(alpha_bar));
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, double eta,
                 const DiffusionSchedule& schedule, Rng* noise_rng) {
    if (!z_t.same_shape(eps_hat)) throw ShapeError("ddim_step: shape mismatch");
    if (t_prev != kCleanStep && !(t > t_prev && t_prev >= 0)) {
        throw ValidationError("ddim_step: timesteps must satisfy t > t_prev >= 0");
    }
    if (t_prev == kCleanStep && t < 0) {
        throw ValidationError("ddim_step: invalid timestep");
    }
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = t_prev == kCleanStep ? 1.0 : schedule.alpha_bar(t_prev);

    Tensor clean = ddim_predict_clean(z_t, eps_hat, ab_t);
    double sigma = 0.0;
    if (eta > 0 && t_prev != kCleanStep) {
        sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) *
                std::sqrt(1.0 - ab_t / ab_prev);
    }
    const double dir_coeff = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    Tensor out = scale(clean, std::sqrt(ab_prev));
    out.add_scaled(eps_hat, dir_coeff);
    if (sigma > 0) {
        if (!noise_rng) throw ValidationError("ddim_step: eta > 0 requires a noise rng");
        out.add_scaled(noise_rng->normal_tensor(z_t.shape()), sigma);
    }
    return out;
}

VideoClip generate(const Backbone& model, const std::string& prompt, const SampleConfig& cfg,
                   const GenerateOptions& opts) {
    cfg.validate(model.schedule());
    const int f = cfg.resolved_frames(model.config());
    if (f > model.config().max_frames) {
        throw ValidationError("generate: frames exceed the backbone maximum");
    }

    ConditionEmbedding cond = model.text_encoder().encode(prompt);
    if (opts.motion) {
        if (opts.verb_index_override) {
            cond.verb_index = *opts.verb_index_override;
        } else {
            RuleBasedTagger fallback;
            const VerbTagger& tagger = opts.tagger ? *opts.tagger : fallback;
            cond.verb_index = locate_verb(prompt, tagger);
        }
        cond.validate();
        cond = enhance_condition(cond, opts.motion->cached_residual);
    }
    const ConditionEmbedding uncond = model.text_encoder().encode_empty();

    std::vector<const AdapterSet*> sets;
    if (opts.motion) sets.push_back(&opts.motion->temporal);
    if (opts.subject_spatial) sets.push_back(opts.subject_spatial);
    validate_adapters(model, sets);

    Rng rng = Rng(cfg.seed).fork("generate");
    Rng init_rng = rng.fork("init_noise");
    Rng eta_rng = rng.fork("eta_noise");
    Tensor z = init_rng.normal_tensor({1, f, model.config().latent_height,
                                       model.config().latent_width,
                                       FrameAutoencoder::kLatentChannels});

    const std::vector<int> ts = ddim_timesteps(model.config().timesteps, cfg.num_steps);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : kCleanStep;

        Graph g;
        ParamBinder binder(g, model.params());
        std::vector<LoraVarMap> maps;
        std::vector<const LoraVarMap*> map_ptrs;
        maps.reserve(sets.size());
        for (const auto* s : sets) {
            maps.push_back(s->bind(g));
            map_ptrs.push_back(&maps.back());
        }
        Var zc = g.constant(z);
        ActivationProbe* probe = (i == 0) ? opts.first_step_probe : nullptr;
        Tensor eps_cond =
            model.forward(g, binder, zc, t, g.constant(cond.token_embeddings), map_ptrs,
                          nullptr, probe)
                .value();
        Tensor eps_uncond =
            model.forward(g, binder, zc, t, g.constant(uncond.token_embeddings), map_ptrs)
                .value();
        Tensor eps_hat = cfg_combine(eps_uncond, eps_cond, cfg.guidance_scale);
        z = ddim_step(z, eps_hat, t, t_prev, cfg.eta, model.schedule(),
                      cfg.eta > 0 ? &eta_rng : nullptr);
    }

    return model.decode_latents(LatentVideo{std::move(z), std::nullopt}, cfg.fps);
}

}  // namespace vmt
