#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vmt/appearance.hpp"
#include "vmt/backbone.hpp"
#include "vmt/data.hpp"
#include "vmt/errors.hpp"
#include "vmt/eval.hpp"
#include "vmt/rng.hpp"
#include "vmt/training.hpp"

using namespace vmt;

namespace {

const Backbone& desk_model() {
    static Backbone model = Backbone::seeded(17);
    return model;
}

MotionDataset circle_dataset(int clips = 2, int frames = 8) {
    MotionDataset ds;
    ds.motion_id = "circle";
    ds.verb = "circling";
    ds.fps = 8.0;
    for (int i = 0; i < clips; ++i) {
        SynthSpec spec;
        spec.jitter_seed = static_cast<std::uint64_t>(i);
        ds.clips.push_back(synth_motion_video(spec, frames, 32, 32));
        ds.base_prompts.push_back(spec_prompt(spec));
    }
    return ds;
}

struct Stage2Setup {
    AdapterSet spatial;
    AdapterSet temporal;
    EnhancerMlp mlp;
    InjectorWeights injector;
    LatentVideo z0;
    ConditionEmbedding cond;
    Tensor pooled;
    Tensor inject_emb;

    explicit Stage2Setup(const Backbone& model, std::uint64_t seed = 3)
        : spatial(AdapterSet::attach(model, AdapterKind::spatial, 4, seed)),
          temporal(AdapterSet::attach(model, AdapterKind::temporal, 4, seed + 1)),
          mlp(EnhancerMlp::init(seed, ToyClipProvider::kDim, model.text_encoder().dim())),
          injector(InjectorWeights::zero_init(model, ToyClipProvider::kDim)) {
        spatial.set_trainable(false);
        ToyClipProvider provider;
        SynthSpec spec;
        VideoClip clip = synth_motion_video(spec, 4, 32, 32);
        z0 = model.encode_frames(clip);
        cond = model.text_encoder().encode(spec_prompt(spec));
        cond.verb_index = 4;
        std::vector<FrameEmbedding> fe;
        for (int i = 0; i < 4; ++i) fe.push_back(embed_frame(clip.frame(i), provider, i));
        pooled = pool_video_embedding(fe);
        inject_emb = fe[0].vector;
    }

    Stage2Trainer::StepInputs inputs() const {
        Stage2Trainer::StepInputs in;
        in.z0 = &z0;
        in.cond = &cond;
        in.pooled = &pooled;
        in.inject_embedding = &inject_emb;
        return in;
    }
};

}  // namespace

TEST(TrainConfig, DefaultsMatchDeployment) {
    TrainConfig cfg;
    EXPECT_EQ(cfg.lora_rank, 32);
    EXPECT_DOUBLE_EQ(cfg.learning_rate, 5e-4);
    EXPECT_EQ(cfg.max_steps, 600);
    EXPECT_DOUBLE_EQ(cfg.lambda_reg, 1e-4);
    EXPECT_DOUBLE_EQ(cfg.null_prompt_probability, 0.1);
    EXPECT_DOUBLE_EQ(cfg.weight_decay, 1e-2);
}

TEST(TrainConfig, FileRoundTripAndUnknownKeyRejected) {
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.max_steps = 42;
    cfg.seed = 99;
    const auto path = std::filesystem::temp_directory_path() / "vmt_test_config.txt";
    {
        std::ofstream os(path);
        for (const auto& [k, v] : cfg.to_map()) os << k << "=" << v << "\n";
    }
    TrainConfig loaded = TrainConfig::from_file(path);
    EXPECT_DOUBLE_EQ(loaded.learning_rate, 1e-3);
    EXPECT_EQ(loaded.max_steps, 42);
    EXPECT_EQ(loaded.seed, 99u);
    {
        std::ofstream os(path);
        os << "not_a_key=1\n";
    }
    EXPECT_THROW(TrainConfig::from_file(path), ValidationError);
    std::filesystem::remove(path);

    TrainConfig bad;
    bad.lambda_reg = -1;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(AdamW, DescendsQuadraticAndClipsGlobally) {
    Tensor x({2}, {10.0, -6.0});
    std::map<std::string, Tensor*> params{{"x", &x}};
    AdamW opt(0.1, 0.9, 0.999, 1e-8, 0.0);
    for (int i = 0; i < 400; ++i) {
        std::map<std::string, Tensor> grads;
        grads.emplace("x", scale(x, 2.0));  // d/dx |x|^2
        opt.step(params, grads, 0.0);
    }
    EXPECT_LT(x.max_abs(), 1e-2);

    // clipping caps the applied update magnitude
    Tensor y({1}, {0.0});
    std::map<std::string, Tensor*> py{{"y", &y}};
    AdamW opt2(1.0, 0.0, 0.0, 1e-12, 0.0);
    std::map<std::string, Tensor> big;
    big.emplace("y", Tensor({1}, {1e9}));
    opt2.step(py, big, 1.0);
    EXPECT_LT(std::fabs(y[0]), 1.01);  // |update| <= lr * clipped/|clipped| ~ 1
}

TEST(DiffusionLoss, OraclePredictorGivesZero) {
    Rng rng(1);
    Tensor eps = rng.normal_tensor({1, 1, 8, 8, 4});
    // A predictor that returns the true noise drives the objective to zero.
    EXPECT_DOUBLE_EQ(diffusion_mse(eps, eps), 0.0);
    Tensor off = eps;
    off[0] += 1.0;
    EXPECT_GT(diffusion_mse(eps, off), 0.0);
}

TEST(Stage1, RejectsTemporalAdapters) {
    const Backbone& model = desk_model();
    AdapterSet temporal = AdapterSet::attach(model, AdapterKind::temporal, 4, 1);
    TrainConfig cfg;
    EXPECT_THROW(Stage1Trainer(model, temporal, cfg), ValidationError);
}

TEST(Stage1, RequiresSingleFrameLatents) {
    const Backbone& model = desk_model();
    AdapterSet spatial = AdapterSet::attach(model, AdapterKind::spatial, 4, 1);
    TrainConfig cfg;
    cfg.max_steps = 1;
    Stage1Trainer trainer(model, spatial, cfg);
    Rng rng(2);
    LatentVideo z0{rng.normal_tensor({1, 4, 8, 8, 4}), std::nullopt};
    PromptSpec prompt;
    prompt.base_prompt = "a red square is circling";
    EXPECT_THROW(trainer.step(z0, prompt), ValidationError);
}

TEST(Stage1, TouchesOnlySpatialLorasAndIsSeedReproducible) {
    const Backbone& model = desk_model();
    const std::uint64_t base_checksum = model.checksum();

    TrainConfig cfg;
    cfg.max_steps = 3;
    cfg.seed = 11;
    cfg.lora_rank = 4;

    auto run = [&] {
        AdapterSet spatial = AdapterSet::attach(model, AdapterKind::spatial, 4, cfg.seed);
        Stage1Trainer trainer(model, spatial, cfg);
        Rng rng(3);
        std::vector<double> losses;
        for (int i = 0; i < 3; ++i) {
            SynthSpec spec;
            spec.jitter_seed = static_cast<std::uint64_t>(i);
            VideoClip clip = synth_motion_video(spec, 1, 32, 32);
            PromptSpec prompt;
            prompt.base_prompt = spec_prompt(spec);
            losses.push_back(trainer.step(model.encode_frames(clip), prompt));
        }
        return std::make_pair(spatial.checksum(), losses);
    };
    auto [ck1, losses1] = run();
    auto [ck2, losses2] = run();
    // Identical seeds: bit-identical adapter checkpoints and loss traces.
    EXPECT_EQ(ck1, ck2);
    for (std::size_t i = 0; i < losses1.size(); ++i) {
        EXPECT_DOUBLE_EQ(losses1[i], losses2[i]);
    }
    // Base weights untouched.
    EXPECT_EQ(model.checksum(), base_checksum);
    // Adapters actually moved.
    AdapterSet fresh = AdapterSet::attach(model, AdapterKind::spatial, 4, cfg.seed);
    EXPECT_NE(ck1, fresh.checksum());
}

TEST(Stage2, ValidatesConfiguration) {
    const Backbone& model = desk_model();
    Stage2Setup s(model);
    TrainConfig cfg;

    // spatial set must be frozen
    AdapterSet trainable_spatial = AdapterSet::attach(model, AdapterKind::spatial, 4, 7);
    EXPECT_THROW(
        Stage2Trainer(model, &trainable_spatial, s.temporal, s.mlp, s.injector, cfg),
        ValidationError);

    // temporal slot must hold a temporal set
    AdapterSet wrong_kind = AdapterSet::attach(model, AdapterKind::spatial, 4, 8);
    EXPECT_THROW(Stage2Trainer(model, &s.spatial, wrong_kind, s.mlp, s.injector, cfg),
                 ValidationError);

    // missing verb index
    Stage2Trainer trainer(model, &s.spatial, s.temporal, s.mlp, s.injector, cfg);
    ConditionEmbedding no_verb = s.cond;
    no_verb.verb_index.reset();
    auto in = s.inputs();
    in.cond = &no_verb;
    EXPECT_THROW(trainer.step(in), ValidationError);

    // single-frame clip rejected
    Rng rng(5);
    LatentVideo single{rng.normal_tensor({1, 1, 8, 8, 4}), std::nullopt};
    auto in2 = s.inputs();
    in2.z0 = &single;
    EXPECT_THROW(trainer.step(in2), ValidationError);
}

TEST(Stage2, LossDecomposesExactly) {
    const Backbone& model = desk_model();
    for (double lambda : {0.0, 1e-4, 0.5, 1e3}) {
        Stage2Setup s(model);
        TrainConfig cfg;
        cfg.lambda_reg = lambda;
        cfg.seed = 13;
        Stage2Trainer trainer(model, &s.spatial, s.temporal, s.mlp, s.injector, cfg);
        for (int i = 0; i < 4; ++i) {
            const Stage2StepOutcome o = trainer.step(s.inputs());
            // Exact decomposition, not approximate: same double expression.
            EXPECT_EQ(o.loss, o.l_t + lambda * o.l_reg) << "lambda " << lambda;
            if (lambda == 0.0) {
                EXPECT_EQ(o.loss, o.l_t);
            }
        }
    }
}

TEST(Stage2, TouchesOnlyStage2Parameters) {
    const Backbone& model = desk_model();
    const std::uint64_t base_checksum = model.checksum();
    Stage2Setup s(model);
    const std::uint64_t spatial_before = s.spatial.checksum();
    const std::uint64_t temporal_before = s.temporal.checksum();

    TrainConfig cfg;
    cfg.seed = 5;
    Stage2Trainer trainer(model, &s.spatial, s.temporal, s.mlp, s.injector, cfg);
    for (int i = 0; i < 6; ++i) trainer.step(s.inputs());

    EXPECT_EQ(model.checksum(), base_checksum);           // base frozen
    EXPECT_EQ(s.spatial.checksum(), spatial_before);      // stage-1 weights shared, frozen
    EXPECT_NE(s.temporal.checksum(), temporal_before);    // temporal adapters moved
    EXPECT_GT(s.mlp.w2.max_abs(), 0.0);                   // enhancer moved off zero init
    double injector_mass = 0;
    for (const auto& [prefix, w] : s.injector.w_p) {
        (void)prefix;
        injector_mass += w.max_abs();
    }
    EXPECT_GT(injector_mass, 0.0);                        // injector moved
}

TEST(Stage2, NullPromptDropoutMatchesProbability) {
    // The trainer draws dropout decisions from the stage2.dropout stream; the
    // chi-square statistic over 10^4 draws must stay below the 1% critical
    // value for one degree of freedom (6.635).
    TrainConfig cfg;
    Rng dropout = Rng(cfg.seed).fork("stage2.dropout");
    const int n = 10000;
    int dropped = 0;
    for (int i = 0; i < n; ++i) {
        if (dropout.bernoulli(cfg.null_prompt_probability)) ++dropped;
    }
    const double exp_drop = n * cfg.null_prompt_probability;
    const double exp_keep = n - exp_drop;
    const double chi2 = (dropped - exp_drop) * (dropped - exp_drop) / exp_drop +
                        (n - dropped - exp_keep) * (n - dropped - exp_keep) / exp_keep;
    EXPECT_LT(chi2, 6.635) << "dropped " << dropped;
}

TEST(TrainAppearance, MockRecaptionedRunProducesCacheAndDeterministicCheckpoint) {
    const Backbone& model = desk_model();
    MotionDataset ds = circle_dataset(2, 4);
    TrainConfig cfg;
    cfg.max_steps = 4;
    cfg.lora_rank = 4;
    cfg.seed = 21;
    MockRecaptioner recap;
    std::vector<TrainLogRecord> log;
    Stage1Result a = train_appearance(model, ds, cfg, recap,
                                      [&](const TrainLogRecord& r) { log.push_back(r); });
    EXPECT_EQ(static_cast<int>(log.size()), cfg.max_steps);
    EXPECT_EQ(a.recaption_cache.size(), 2u);
    for (const auto& [clip, prompt] : a.recaption_cache) {
        (void)clip;
        EXPECT_NE(prompt.find("circling"), std::string::npos);
        EXPECT_NE(prompt.find("subject over a"), std::string::npos);  // mock descriptors
    }
    Stage1Result b = train_appearance(model, ds, cfg, recap, {});
    EXPECT_EQ(a.spatial.checksum(), b.spatial.checksum());

    const auto path = std::filesystem::temp_directory_path() / "vmt_test_stage1.ckpt";
    a.save(path);
    AdapterSet loaded = AdapterSet::load(path);
    EXPECT_EQ(loaded.checksum(), a.spatial.checksum());
    std::filesystem::remove(path);
}

TEST(TrainMotion, ProducesLoadableCheckpointWithCachedResidual) {
    const Backbone& model = desk_model();
    const std::uint64_t base_checksum = model.checksum();
    MotionDataset ds = circle_dataset(2, 4);
    TrainConfig cfg;
    cfg.max_steps = 5;
    cfg.lora_rank = 4;
    cfg.frames_per_sample = 4;
    cfg.seed = 31;
    MockRecaptioner recap;
    TrainConfig s1 = cfg;
    s1.max_steps = 2;
    Stage1Result stage1 = train_appearance(model, ds, s1, recap, {});
    const std::uint64_t spatial_checksum = stage1.spatial.checksum();

    ToyClipProvider provider;
    stage1.spatial.set_trainable(false);
    std::vector<TrainLogRecord> log;
    MotionCheckpoint ckpt =
        train_motion(model, ds, stage1.spatial, cfg, provider,
                     [&](const TrainLogRecord& r) { log.push_back(r); });

    EXPECT_EQ(model.checksum(), base_checksum);
    EXPECT_EQ(stage1.spatial.checksum(), spatial_checksum);  // input untouched
    EXPECT_EQ(ckpt.verb_token, "circling");
    EXPECT_EQ(ckpt.motion_id, "circle");
    EXPECT_EQ(ckpt.cached_residual.numel(), model.text_encoder().dim());
    EXPECT_GT(ckpt.cached_residual.max_abs(), 0.0);  // MLP left its zero init
    EXPECT_EQ(static_cast<int>(log.size()), cfg.max_steps);
    for (const auto& r : log) {
        EXPECT_EQ(r.loss, r.l_t + cfg.lambda_reg * r.l_reg);
    }

    const auto path = std::filesystem::temp_directory_path() / "vmt_test_motion.ckpt";
    ckpt.save(path);
    MotionCheckpoint loaded = MotionCheckpoint::load(path);
    EXPECT_EQ(loaded.verb_token, ckpt.verb_token);
    EXPECT_EQ(loaded.temporal.checksum(), ckpt.temporal.checksum());
    EXPECT_EQ(loaded.injector.w_p.size(), ckpt.injector.w_p.size());
    for (std::int64_t i = 0; i < ckpt.cached_residual.numel(); ++i) {
        EXPECT_EQ(loaded.cached_residual[i], ckpt.cached_residual[i]);
    }
    EXPECT_EQ(loaded.config_snapshot.at("max_steps"), "5");
    std::filesystem::remove(path);
}

// With the MLP's second layer, the adapters' up-projections and the injector
// all zero-initialized, the stage-2 forward at step 0 must equal the
// unenhanced frozen model exactly.
TEST(Stage2, ForwardAtInitEqualsUnenhancedModel) {
    const Backbone& model = desk_model();
    Stage2Setup s(model, 9);
    Rng rng(10);
    const int t = 444;
    Tensor z_t = q_sample(s.z0.latents, model.schedule().alpha_bar(t),
                          rng.normal_tensor(s.z0.latents.shape()));

    Tensor base_out = model.predict_noise(z_t, t, s.cond);

    Graph g;
    ParamBinder binder(g, model.params());
    LoraVarMap sv = s.spatial.bind(g);
    LoraVarMap tv = s.temporal.bind(g);
    EnhancerMlp::Bound mlp_vars = s.mlp.bind(g, false);
    InjectionVars inject = s.injector.bind(g, s.inject_emb, false);
    Var cond_tokens = g.constant(s.cond.token_embeddings);
    Var e_b = g.row(cond_tokens, *s.cond.verb_index);
    Var e_r = compute_residual(g, g.constant(s.pooled), e_b, mlp_vars);
    EXPECT_DOUBLE_EQ(e_r.value().max_abs(), 0.0);  // W2 zero init
    Var enhanced = enhance_condition(g, cond_tokens, *s.cond.verb_index, e_r);
    Tensor full = model.forward(g, binder, g.constant(z_t), t, enhanced, {&sv, &tv}, &inject)
                      .value();
    for (std::int64_t i = 0; i < base_out.numel(); ++i) {
        ASSERT_EQ(full[i], base_out[i]) << "stage-2 machinery shifted the step-0 forward";
    }
}

TEST(Stage2, BatchStepDecomposesAndAdvancesOnce) {
    const Backbone& model = desk_model();
    Stage2Setup s(model, 12);
    TrainConfig cfg;
    cfg.lambda_reg = 0.25;
    cfg.seed = 40;
    Stage2Trainer trainer(model, &s.spatial, s.temporal, s.mlp, s.injector, cfg);
    std::vector<Stage2Trainer::StepInputs> batch{s.inputs(), s.inputs()};
    const Stage2StepOutcome o = trainer.step_batch(batch);
    EXPECT_EQ(o.loss, o.l_t + cfg.lambda_reg * o.l_reg);
    EXPECT_EQ(trainer.steps_done(), 1);  // one optimizer step for the batch
}

TEST(Pretrain, UpdatesEveryParameterDeterministically) {
    Backbone a = Backbone::seeded(23);
    Backbone b = Backbone::seeded(23);
    PretrainConfig pc;
    pc.steps = 2;
    pc.seed = 23;
    pretrain_backbone(a, pc);
    pretrain_backbone(b, pc);
    EXPECT_EQ(a.checksum(), b.checksum());
    EXPECT_NE(a.checksum(), Backbone::seeded(23).checksum());
}
