#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vmt/appearance.hpp"
#include "vmt/backbone.hpp"
#include "vmt/data.hpp"
#include "vmt/lora.hpp"
#include "vmt/motion_enhancer.hpp"
#include "vmt/rng.hpp"
#include "vmt/tensor.hpp"

namespace vmt {

struct TrainConfig {
    int lora_rank = 32;
    double learning_rate = 5e-4;
    int max_steps = 600;
    double lambda_reg = 1e-4;
    int batch_size = 1;
    std::uint64_t seed = 0;
    int frames_per_sample = 8;
    double null_prompt_probability = 0.1;
    std::string provider = "toy-clip";

    // Optimizer constants; fixed defaults, recorded in checkpoints.
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 1e-2;
    double grad_clip_norm = 1.0;

    void validate() const;
    std::map<std::string, std::string> to_map() const;
    static TrainConfig from_map(const std::map<std::string, std::string>& kv);
    /// Flat key=value file; unknown keys are rejected.
    static TrainConfig from_file(const std::filesystem::path& path);
};

/// Decoupled-weight-decay Adam over named tensors; iteration order is the
/// sorted key order, so updates are reproducible.
class AdamW {
public:
    AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);
    explicit AdamW(const TrainConfig& cfg)
        : AdamW(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                cfg.weight_decay) {}

    /// One update; grads may be pre-scaled by the caller. clip_norm <= 0
    /// disables clipping.
    void step(const std::map<std::string, Tensor*>& params,
              const std::map<std::string, Tensor>& grads, double clip_norm);

    int step_count() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

struct TrainLogRecord {
    int step = 0;
    double loss = 0;
    double l_t = 0;
    double l_reg = 0;
    double er_norm = 0;
    double wallclock = 0;
};

using LogSink = std::function<void(const TrainLogRecord&)>;

/// Append-only TSV log: step, l_t, l_reg, er_norm, wallclock.
class TrainLogWriter {
public:
    explicit TrainLogWriter(const std::filesystem::path& path);
    void append(const TrainLogRecord& rec);

private:
    std::filesystem::path path_;
};

/// MSE between true and predicted noise (Eq.-style diffusion objective).
double diffusion_mse(const Tensor& eps, const Tensor& eps_hat);

/// Appearance learning: optimizes one spatial adapter set on single-frame
/// latents conditioned on recaptioned prompts. Base weights and the temporal
/// stack never change.
class Stage1Trainer {
public:
    Stage1Trainer(const Backbone& model, AdapterSet& spatial, const TrainConfig& cfg);

    /// One step on a single-frame latent [1,1,h,w,c] and its prompt.
    double step(const LatentVideo& z0, const PromptSpec& prompt);

    struct Sample {
        const LatentVideo* z0 = nullptr;
        const PromptSpec* prompt = nullptr;
    };
    /// One optimizer step over a batch; the loss is the batch mean.
    double step_batch(const std::vector<Sample>& batch);

    int steps_done() const { return step_count_; }

private:
    const Backbone& model_;
    AdapterSet& spatial_;
    TrainConfig cfg_;
    AdamW opt_;
    Rng timestep_rng_, noise_rng_, dropout_rng_;
    int step_count_ = 0;
};

struct Stage2StepOutcome {
    double loss = 0;
    double l_t = 0;
    double l_reg = 0;
    double er_norm = 0;
};

/// Motion learning: optimizes temporal adapters, the enhancer MLP and the
/// appearance-injection maps. Spatial adapters stay attached and frozen.
class Stage2Trainer {
public:
    Stage2Trainer(const Backbone& model, const AdapterSet* spatial_frozen, AdapterSet& temporal,
                  EnhancerMlp& mlp, InjectorWeights& injector, const TrainConfig& cfg);

    struct StepInputs {
        const LatentVideo* z0 = nullptr;        // [1,f,h,w,c], f >= 2
        const ConditionEmbedding* cond = nullptr;  // unenhanced, verb_index set
        const Tensor* pooled = nullptr;            // [d_img] video embedding
        const Tensor* inject_embedding = nullptr;  // [d_img] random-frame embedding
    };
    Stage2StepOutcome step(const StepInputs& in);
    /// One optimizer step over a batch (one clip per element); losses and the
    /// logged norms are batch means.
    Stage2StepOutcome step_batch(const std::vector<StepInputs>& batch);

    /// Residual produced by the current MLP weights for given inputs.
    Tensor current_residual(const Tensor& pooled, const Tensor& e_b) const;

    int steps_done() const { return step_count_; }

private:
    const Backbone& model_;
    const AdapterSet* spatial_;
    AdapterSet& temporal_;
    EnhancerMlp& mlp_;
    InjectorWeights& injector_;
    TrainConfig cfg_;
    AdamW opt_;
    Rng timestep_rng_, noise_rng_, dropout_rng_;
    int step_count_ = 0;
};

/// Persisted result of the motion learning stage. Self-contained: loadable
/// without the reference videos.
struct MotionCheckpoint {
    AdapterSet temporal;
    EnhancerMlp mlp;
    Tensor cached_residual;  // [d_text]
    InjectorWeights injector;
    std::string verb_token;
    std::string motion_id;
    std::string provider_name;
    std::map<std::string, std::string> config_snapshot;

    void save(const std::filesystem::path& path) const;
    static MotionCheckpoint load(const std::filesystem::path& path);
};

struct Stage1Result {
    AdapterSet spatial;
    std::map<std::string, std::string> recaption_cache;  // clip name -> prompt

    void save(const std::filesystem::path& path) const;
};

/// Stage 1 over a dataset: recaption each clip once (cached), then optimize
/// spatial LoRAs on uniformly sampled single frames.
Stage1Result train_appearance(const Backbone& model, const MotionDataset& dataset,
                              const TrainConfig& cfg, RecaptionClient& recaptioner,
                              const LogSink& log = {});

/// Stage 2 over a dataset with frozen stage-1 spatial adapters. The cached
/// residual is evaluated at the end over the mean per-clip pooled embedding.
MotionCheckpoint train_motion(const Backbone& model, const MotionDataset& dataset,
                              const AdapterSet& spatial_frozen, const TrainConfig& cfg,
                              const EmbeddingProvider& provider, const LogSink& log = {});

struct PretrainConfig {
    int steps = 1600;
    double learning_rate = 2e-3;
    std::uint64_t seed = 17;
    double null_prompt_probability = 0.1;
    int frames = 8;
    double grad_clip_norm = 1.0;
    double weight_decay = 0.0;
};

/// Gives the seeded backbone its basic text-to-appearance competence on a
/// procedural corpus of colored shapes moving along sweep/lift paths (circle
/// and bounce stay unseen so they can be customized later). Deterministic for
/// a fixed config; updates every UNet parameter in place.
void pretrain_backbone(Backbone& model, const PretrainConfig& cfg, const LogSink& log = {});

}  // namespace vmt
