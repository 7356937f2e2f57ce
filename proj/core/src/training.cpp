#include "vmt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vmt/archive.hpp"
#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

/// Gradients of the bound vars, keyed like the parameter map; zeros when a
/// parameter did not participate in the graph.
std::map<std::string, Tensor> collect_grads(const Graph& g,
                                            const std::map<std::string, Var>& vars) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, var] : vars) {
        if (g.grad_present(var.id())) {
            grads.emplace(name, var.grad());
        } else {
            grads.emplace(name, Tensor::zeros(var.value().shape()));
        }
    }
    return grads;
}

LatentVideo latent_window(const LatentVideo& z0, std::int64_t start, std::int64_t count) {
    const Tensor& z = z0.latents;
    const std::int64_t per_frame = z.numel() / z.dim(1);
    Tensor out({1, count, z.dim(2), z.dim(3), z.dim(4)});
    std::copy(z.data() + start * per_frame, z.data() + (start + count) * per_frame, out.data());
    return LatentVideo{std::move(out), std::nullopt};
}

int find_verb_index(const std::string& prompt, const std::string& verb) {
    const auto tokens = TextEncoder::tokenize(prompt);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == verb) return static_cast<int>(i);
    }
    throw ValidationError("prompt lacks the verb token '" + verb + "': " + prompt);
}

}  // namespace

void TrainConfig::validate() const {
    if (lambda_reg < 0) throw ValidationError("config: lambda_reg must be >= 0");
    if (max_steps < 1) throw ValidationError("config: max_steps must be >= 1");
    if (lora_rank < 1) throw ValidationError("config: lora_rank must be >= 1");
    if (learning_rate <= 0) throw ValidationError("config: learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
    if (frames_per_sample < 1) throw ValidationError("config: frames_per_sample must be >= 1");
    if (null_prompt_probability < 0 || null_prompt_probability > 1) {
        throw ValidationError("config: null_prompt_probability must be in [0,1]");
    }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    std::map<std::string, std::string> kv;
    auto put_num = [&kv](const char* k, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        kv[k] = os.str();
    };
    kv["lora_rank"] = std::to_string(lora_rank);
    put_num("learning_rate", learning_rate);
    kv["max_steps"] = std::to_string(max_steps);
    put_num("lambda_reg", lambda_reg);
    kv["batch_size"] = std::to_string(batch_size);
    kv["seed"] = std::to_string(seed);
    kv["frames_per_sample"] = std::to_string(frames_per_sample);
    put_num("null_prompt_probability", null_prompt_probability);
    kv["provider"] = provider;
    put_num("adam_beta1", adam_beta1);
    put_num("adam_beta2", adam_beta2);
    put_num("adam_eps", adam_eps);
    put_num("weight_decay", weight_decay);
    put_num("grad_clip_norm", grad_clip_norm);
    return kv;
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    for (const auto& [k, v] : kv) {
        if (k == "lora_rank") cfg.lora_rank = std::stoi(v);
        else if (k == "learning_rate") cfg.learning_rate = std::stod(v);
        else if (k == "max_steps") cfg.max_steps = std::stoi(v);
        else if (k == "lambda_reg") cfg.lambda_reg = std::stod(v);
        else if (k == "batch_size") cfg.batch_size = std::stoi(v);
        else if (k == "seed") cfg.seed = std::stoull(v);
        else if (k == "frames_per_sample") cfg.frames_per_sample = std::stoi(v);
        else if (k == "null_prompt_probability") cfg.null_prompt_probability = std::stod(v);
        else if (k == "provider") cfg.provider = v;
        else if (k == "adam_beta1") cfg.adam_beta1 = std::stod(v);
        else if (k == "adam_beta2") cfg.adam_beta2 = std::stod(v);
        else if (k == "adam_eps") cfg.adam_eps = std::stod(v);
        else if (k == "weight_decay") cfg.weight_decay = std::stod(v);
        else if (k == "grad_clip_norm") cfg.grad_clip_norm = std::stod(v);
        else throw ValidationError("config: unknown key '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("config: cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config: malformed line: " + line);
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return from_map(kv);
}

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(const std::map<std::string, Tensor*>& params,
                 const std::map<std::string, Tensor>& grads, double clip_norm) {
    ++t_;
    double scale = 1.0;
    if (clip_norm > 0) {
        double sq = 0;
        for (const auto& [name, g] : grads) {
            (void)name;
            sq += g.sum_sq();
        }
        const double norm = std::sqrt(sq);
        if (norm > clip_norm) scale = clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) {
            throw ValidationError("AdamW: missing gradient for " + name);
        }
        Tensor& m = m_.try_emplace(name, Tensor::zeros(p->shape())).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros(p->shape())).first->second;
        const Tensor& g = git->second;
        double* pd = p->data();
        for (std::int64_t i = 0; i < p->numel(); ++i) {
            const double gi = g[i] * scale;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            pd[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * pd[i]);
        }
    }
}

TrainLogWriter::TrainLogWriter(const std::filesystem::path& path) : path_(path) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream os(path_, std::ios::trunc);
    os << "step\tl_t\tl_reg\ter_norm\twallclock\n";
}

void TrainLogWriter::append(const TrainLogRecord& rec) {
    std::ofstream os(path_, std::ios::app);
    os.precision(10);
    os << rec.step << "\t" << rec.l_t << "\t" << rec.l_reg << "\t" << rec.er_norm << "\t"
       << rec.wallclock << "\n";
}

double diffusion_mse(const Tensor& eps, const Tensor& eps_hat) {
    if (!eps.same_shape(eps_hat)) throw ShapeError("diffusion_mse: shape mismatch");
    double acc = 0;
    for (std::int64_t i = 0; i < eps.numel(); ++i) {
        const double d = eps[i] - eps_hat[i];
        acc += d * d;
    }
    return acc / static_cast<double>(eps.numel());
}

Stage1Trainer::Stage1Trainer(const Backbone& model, AdapterSet& spatial, const TrainConfig& cfg)
    : model_(model),
      spatial_(spatial),
      cfg_(cfg),
      opt_(cfg),
      timestep_rng_(Rng(cfg.seed).fork("stage1.timestep")),
      noise_rng_(Rng(cfg.seed).fork("stage1.noise")),
      dropout_rng_(Rng(cfg.seed).fork("stage1.dropout")) {
    cfg_.validate();
    if (spatial_.kind() != AdapterKind::spatial) {
        throw ValidationError("stage 1 trains spatial adapters; got a temporal set");
    }
    if (!spatial_.trainable()) {
        throw ValidationError("stage 1: spatial adapter set must be trainable");
    }
    validate_adapters(model_, {&spatial_});
}

double Stage1Trainer::step(const LatentVideo& z0, const PromptSpec& prompt) {
    Sample s;
    s.z0 = &z0;
    s.prompt = &prompt;
    return step_batch({s});
}

double Stage1Trainer::step_batch(const std::vector<Sample>& batch) {
    if (batch.empty()) throw ValidationError("stage 1 step: empty batch");
    for (const Sample& s : batch) {
        if (!s.z0 || !s.prompt) throw ValidationError("stage 1 step: missing sample");
        if (s.z0->frame_count() != 1) {
            throw ValidationError("stage 1 operates on single-frame latents");
        }
    }

    Graph g;
    ParamBinder binder(g, model_.params());
    LoraVarMap lora = spatial_.bind(g);
    Var loss;
    for (const Sample& s : batch) {
        const int t = static_cast<int>(timestep_rng_.uniform_int(model_.config().timesteps));
        const Tensor eps = noise_rng_.normal_tensor(s.z0->latents.shape());
        const Tensor z_t = q_sample(s.z0->latents, model_.schedule().alpha_bar(t), eps);
        const bool dropped = dropout_rng_.bernoulli(cfg_.null_prompt_probability);
        const ConditionEmbedding cond =
            dropped ? model_.text_encoder().encode_empty()
                    : model_.text_encoder().encode(s.prompt->effective_prompt());
        Var sample_loss = g.mse(g.constant(eps),
                                model_.forward(g, binder, g.constant(z_t), t,
                                               g.constant(cond.token_embeddings), {&lora}));
        loss = loss.valid() ? g.add(loss, sample_loss) : sample_loss;
    }
    if (batch.size() > 1) loss = g.scale(loss, 1.0 / static_cast<double>(batch.size()));
    g.backward(loss);

    std::map<std::string, Var> vars;
    std::map<std::string, Tensor*> params;
    for (auto& [path, pair] : spatial_.mutable_placement()) {
        auto vit = lora.pairs.find(path);
        vars.emplace(path + ".down", vit->second.first);
        vars.emplace(path + ".up", vit->second.second);
        params.emplace(path + ".down", &pair.down);
        params.emplace(path + ".up", &pair.up);
    }
    opt_.step(params, collect_grads(g, vars), cfg_.grad_clip_norm);
    ++step_count_;
    return loss.value().item();
}

Stage2Trainer::Stage2Trainer(const Backbone& model, const AdapterSet* spatial_frozen,
                             AdapterSet& temporal, EnhancerMlp& mlp, InjectorWeights& injector,
                             const TrainConfig& cfg)
    : model_(model),
      spatial_(spatial_frozen),
      temporal_(temporal),
      mlp_(mlp),
      injector_(injector),
      cfg_(cfg),
      opt_(cfg),
      timestep_rng_(Rng(cfg.seed).fork("stage2.timestep")),
      noise_rng_(Rng(cfg.seed).fork("stage2.noise")),
      dropout_rng_(Rng(cfg.seed).fork("stage2.dropout")) {
    cfg_.validate();
    if (temporal_.kind() != AdapterKind::temporal) {
        throw ValidationError("stage 2 trains temporal adapters; got a spatial set");
    }
    if (!temporal_.trainable()) {
        throw ValidationError("stage 2: temporal adapter set must be trainable");
    }
    if (spatial_) {
        if (spatial_->kind() != AdapterKind::spatial) {
            throw ValidationError("stage 2: frozen set must be spatial");
        }
        if (spatial_->trainable()) {
            throw ValidationError("stage 2: spatial adapters must be frozen");
        }
        validate_adapters(model_, {spatial_, &temporal_});
    } else {
        validate_adapters(model_, {&temporal_});
    }
}

Tensor Stage2Trainer::current_residual(const Tensor& pooled, const Tensor& e_b) const {
    return compute_residual(pooled, e_b, mlp_);
}

Stage2StepOutcome Stage2Trainer::step(const StepInputs& in) { return step_batch({in}); }

Stage2StepOutcome Stage2Trainer::step_batch(const std::vector<StepInputs>& batch) {
    if (batch.empty()) throw ValidationError("stage 2 step: empty batch");
    for (const StepInputs& in : batch) {
        if (!in.z0 || !in.cond || !in.pooled || !in.inject_embedding) {
            throw ValidationError("stage 2 step: missing inputs");
        }
        if (in.z0->frame_count() < 2) {
            throw ValidationError("stage 2 operates on clips with at least two frames");
        }
        if (!in.cond->verb_index) {
            throw ValidationError("stage 2 step: condition lacks a verb index");
        }
        if (in.cond->enhanced) {
            throw ValidationError("stage 2 step: condition must be unenhanced");
        }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    Graph g;
    ParamBinder binder(g, model_.params());
    LoraVarMap temporal_vars = temporal_.bind(g);
    LoraVarMap spatial_vars;
    std::vector<const LoraVarMap*> adapters;
    if (spatial_) {
        spatial_vars = spatial_->bind(g);
        adapters.push_back(&spatial_vars);
    }
    adapters.push_back(&temporal_vars);
    EnhancerMlp::Bound mlp_vars = mlp_.bind(g, true);

    Var l_t, l_reg;
    double er_norm_sum = 0;
    std::vector<InjectionVars> inject_vars;
    inject_vars.reserve(batch.size());
    for (const StepInputs& in : batch) {
        const int t = static_cast<int>(timestep_rng_.uniform_int(model_.config().timesteps));
        const Tensor eps = noise_rng_.normal_tensor(in.z0->latents.shape());
        const Tensor z_t = q_sample(in.z0->latents, model_.schedule().alpha_bar(t), eps);
        const bool dropped = dropout_rng_.bernoulli(cfg_.null_prompt_probability);

        // Residual from this clip's pooled embedding and in-context verb row.
        Var cond_tokens = g.constant(in.cond->token_embeddings);
        Var e_b = g.row(cond_tokens, *in.cond->verb_index);
        Var e_r = compute_residual(g, g.constant(*in.pooled), e_b, mlp_vars);
        Var sample_reg = reg_loss(g, e_r);
        er_norm_sum += e_r.value().l2_norm();

        Var cond_used;
        if (dropped) {
            cond_used = g.constant(model_.text_encoder().encode_empty().token_embeddings);
        } else {
            cond_used = enhance_condition(g, cond_tokens, *in.cond->verb_index, e_r);
        }

        inject_vars.push_back(injector_.bind(g, *in.inject_embedding, true));
        Var pred = model_.forward(g, binder, g.constant(z_t), t, cond_used, adapters,
                                  &inject_vars.back());
        Var sample_l_t = g.mse(g.constant(eps), pred);
        l_t = l_t.valid() ? g.add(l_t, sample_l_t) : sample_l_t;
        l_reg = l_reg.valid() ? g.add(l_reg, sample_reg) : sample_reg;
    }
    if (batch.size() > 1) {
        l_t = g.scale(l_t, inv_b);
        l_reg = g.scale(l_reg, inv_b);
    }
    Var loss = g.add_scaled(l_t, l_reg, cfg_.lambda_reg);
    g.backward(loss);

    std::map<std::string, Var> vars;
    std::map<std::string, Tensor*> params;
    for (auto& [path, pair] : temporal_.mutable_placement()) {
        auto vit = temporal_vars.pairs.find(path);
        vars.emplace("lora." + path + ".down", vit->second.first);
        vars.emplace("lora." + path + ".up", vit->second.second);
        params.emplace("lora." + path + ".down", &pair.down);
        params.emplace("lora." + path + ".up", &pair.up);
    }
    vars.emplace("mlp.w1", mlp_vars.w1);
    vars.emplace("mlp.w2", mlp_vars.w2);
    params.emplace("mlp.w1", &mlp_.w1);
    params.emplace("mlp.w2", &mlp_.w2);
    std::map<std::string, Tensor> grads = collect_grads(g, vars);
    for (auto& [prefix, w] : injector_.w_p) {
        // Each batch element binds its own injection leaf; sum their grads.
        Tensor acc = Tensor::zeros(w.shape());
        for (const InjectionVars& iv : inject_vars) {
            const Var& v = iv.w_p.at(prefix);
            if (g.grad_present(v.id())) acc.add_scaled(v.grad(), 1.0);
        }
        grads.emplace("inject." + prefix, std::move(acc));
        params.emplace("inject." + prefix, &w);
    }
    opt_.step(params, grads, cfg_.grad_clip_norm);
    ++step_count_;

    Stage2StepOutcome out;
    out.loss = loss.value().item();
    out.l_t = l_t.value().item();
    out.l_reg = l_reg.value().item();
    out.er_norm = er_norm_sum * inv_b;
    return out;
}

void MotionCheckpoint::save(const std::filesystem::path& path) const {
    TensorArchive a;
    a.meta["kind"] = "motion";
    a.meta["verb"] = verb_token;
    a.meta["motion_id"] = motion_id;
    a.meta["provider"] = provider_name;
    a.meta["adapter_rank"] = std::to_string(temporal.rank());
    a.meta["adapter_alpha"] = std::to_string(temporal.rank() * temporal.scale());
    a.meta["d_img"] = std::to_string(injector.d_img);
    for (const auto& [k, v] : config_snapshot) a.meta["config." + k] = v;
    for (const auto& [p, pair] : temporal.placement()) {
        a.put("lora." + p + ".down", pair.down);
        a.put("lora." + p + ".up", pair.up);
    }
    a.put("mlp.w1", mlp.w1);
    a.put("mlp.w2", mlp.w2);
    a.put("residual", cached_residual);
    for (const auto& [prefix, w] : injector.w_p) a.put("inject." + prefix, w);
    a.save(path);
}

MotionCheckpoint MotionCheckpoint::load(const std::filesystem::path& path) {
    TensorArchive a = TensorArchive::load(path);
    if (a.meta_or("kind", "") != "motion") {
        throw ValidationError("not a motion checkpoint: " + path.string());
    }
    MotionCheckpoint ckpt;
    ckpt.verb_token = a.meta_at("verb");
    ckpt.motion_id = a.meta_or("motion_id", "");
    ckpt.provider_name = a.meta_or("provider", "toy-clip");
    const int rank = std::stoi(a.meta_at("adapter_rank"));
    const double alpha = std::stod(a.meta_at("adapter_alpha"));
    std::map<std::string, LoraPair> placement;
    InjectorWeights injector;
    injector.d_img = std::stoi(a.meta_at("d_img"));
    for (const auto& [name, t] : a.tensors) {
        if (name.rfind("lora.", 0) == 0 && name.size() > 10 &&
            name.compare(name.size() - 5, 5, ".down") == 0) {
            const std::string p = name.substr(5, name.size() - 10);
            LoraPair pair;
            pair.rank = rank;
            pair.alpha = alpha;
            pair.down = t;
            pair.up = a.get("lora." + p + ".up");
            placement.emplace(p, std::move(pair));
        } else if (name.rfind("inject.", 0) == 0) {
            injector.w_p.emplace(name.substr(7), t);
        }
    }
    ckpt.temporal = AdapterSet::assemble(AdapterKind::temporal, rank, alpha,
                                         std::move(placement), false);
    ckpt.mlp.w1 = a.get("mlp.w1");
    ckpt.mlp.w2 = a.get("mlp.w2");
    ckpt.cached_residual = a.get("residual");
    ckpt.injector = std::move(injector);
    for (const auto& [k, v] : a.meta) {
        if (k.rfind("config.", 0) == 0) ckpt.config_snapshot[k.substr(7)] = v;
    }
    return ckpt;
}

void Stage1Result::save(const std::filesystem::path& path) const {
    std::map<std::string, std::string> extra;
    for (const auto& [clip, prompt] : recaption_cache) extra["recaption." + clip] = prompt;
    spatial.save(path, extra);
}

Stage1Result train_appearance(const Backbone& model, const MotionDataset& dataset,
                              const TrainConfig& cfg, RecaptionClient& recaptioner,
                              const LogSink& log) {
    cfg.validate();
    dataset.validate();
    const double t0 = now_seconds();
    Rng root(cfg.seed);
    Rng clip_rng = root.fork("stage1.clip");
    Rng frame_rng = root.fork("stage1.frame");
    Rng recap_rng = root.fork("stage1.recaption_frame");

    // Recaption once per clip on a random frame; failures fall back to the
    // base prompt and are kept in the cache for the checkpoint.
    std::vector<PromptSpec> prompts;
    std::map<std::string, std::string> cache;
    std::vector<std::string> recaption_log;
    for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
        PromptSpec base;
        base.base_prompt = dataset.base_prompts[i];
        base.verb_index = find_verb_index(base.base_prompt, dataset.verb);
        const auto fi = recap_rng.uniform_int(dataset.clips[i].frame_count());
        PromptSpec expanded =
            recaption(base, dataset.clips[i].frame(fi), recaptioner, &recaption_log);
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%03d", static_cast<int>(i));
        cache[name] = expanded.effective_prompt();
        prompts.push_back(std::move(expanded));
    }

    // Cache single-frame latents per clip.
    std::vector<LatentVideo> latents;
    latents.reserve(dataset.clips.size());
    for (const auto& clip : dataset.clips) latents.push_back(model.encode_frames(clip));

    AdapterSet spatial =
        AdapterSet::attach(model, AdapterKind::spatial, cfg.lora_rank, cfg.seed);
    Stage1Trainer trainer(model, spatial, cfg);
    for (int s = 0; s < cfg.max_steps; ++s) {
        std::vector<LatentVideo> frames;
        std::vector<Stage1Trainer::Sample> batch;
        frames.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto ci = clip_rng.uniform_int(static_cast<std::int64_t>(latents.size()));
            const auto fi =
                frame_rng.uniform_int(latents[static_cast<std::size_t>(ci)].frame_count());
            frames.push_back(latent_window(latents[static_cast<std::size_t>(ci)], fi, 1));
            Stage1Trainer::Sample sample;
            sample.z0 = &frames.back();
            sample.prompt = &prompts[static_cast<std::size_t>(ci)];
            batch.push_back(sample);
        }
        const double loss = trainer.step_batch(batch);
        if (log) {
            TrainLogRecord rec;
            rec.step = s + 1;
            rec.l_t = loss;
            rec.loss = loss;
            rec.wallclock = now_seconds() - t0;
            log(rec);
        }
    }
    return Stage1Result{std::move(spatial), std::move(cache)};
}

MotionCheckpoint train_motion(const Backbone& model, const MotionDataset& dataset,
                              const AdapterSet& spatial_frozen, const TrainConfig& cfg,
                              const EmbeddingProvider& provider, const LogSink& log) {
    cfg.validate();
    dataset.validate();
    if (spatial_frozen.kind() != AdapterKind::spatial) {
        throw ValidationError("train_motion: spatial checkpoint has the wrong kind");
    }
    const double t0 = now_seconds();
    AdapterSet spatial = spatial_frozen;
    spatial.set_trainable(false);

    Rng root(cfg.seed);
    Rng clip_rng = root.fork("stage2.clip");
    Rng window_rng = root.fork("stage2.window");
    Rng inject_rng = root.fork("stage2.inject_frame");

    struct ClipCache {
        LatentVideo z0;
        ConditionEmbedding cond;
        std::vector<FrameEmbedding> frame_embeddings;
        Tensor pooled;
        Tensor e_b;
    };
    std::vector<ClipCache> cache;
    for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
        ClipCache cc;
        cc.z0 = model.encode_frames(dataset.clips[i]);
        cc.cond = model.text_encoder().encode(dataset.base_prompts[i]);
        cc.cond.verb_index = find_verb_index(dataset.base_prompts[i], dataset.verb);
        for (std::int64_t fi = 0; fi < dataset.clips[i].frame_count(); ++fi) {
            cc.frame_embeddings.push_back(
                embed_frame(dataset.clips[i].frame(fi), provider, static_cast<int>(fi)));
        }
        cc.pooled = pool_video_embedding(cc.frame_embeddings);
        const std::int64_t d = cc.cond.dim();
        cc.e_b = Tensor({d});
        const double* rowp =
            cc.cond.token_embeddings.data() + *cc.cond.verb_index * d;
        std::copy(rowp, rowp + d, cc.e_b.data());
        cache.push_back(std::move(cc));
    }

    AdapterSet temporal =
        AdapterSet::attach(model, AdapterKind::temporal, cfg.lora_rank, cfg.seed);
    EnhancerMlp mlp = EnhancerMlp::init(cfg.seed, provider.dim(), model.text_encoder().dim());
    InjectorWeights injector = InjectorWeights::zero_init(model, provider.dim());

    Stage2Trainer trainer(model, &spatial, temporal, mlp, injector, cfg);
    for (int s = 0; s < cfg.max_steps; ++s) {
        std::vector<LatentVideo> windows;
        std::vector<Stage2Trainer::StepInputs> batch;
        windows.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto ci = clip_rng.uniform_int(static_cast<std::int64_t>(cache.size()));
            ClipCache& cc = cache[static_cast<std::size_t>(ci)];
            const std::int64_t f = cc.z0.frame_count();
            const std::int64_t win = std::min<std::int64_t>(f, cfg.frames_per_sample);
            const std::int64_t start = win < f ? window_rng.uniform_int(f - win + 1) : 0;
            windows.push_back(latent_window(cc.z0, start, win));
            const auto inj =
                inject_rng.uniform_int(static_cast<std::int64_t>(cc.frame_embeddings.size()));
            Stage2Trainer::StepInputs in;
            in.z0 = &windows.back();
            in.cond = &cc.cond;
            in.pooled = &cc.pooled;
            in.inject_embedding = &cc.frame_embeddings[static_cast<std::size_t>(inj)].vector;
            batch.push_back(in);
        }
        const Stage2StepOutcome o = trainer.step_batch(batch);
        if (log) {
            TrainLogRecord rec;
            rec.step = s + 1;
            rec.loss = o.loss;
            rec.l_t = o.l_t;
            rec.l_reg = o.l_reg;
            rec.er_norm = o.er_norm;
            rec.wallclock = now_seconds() - t0;
            log(rec);
        }
    }

    // Freeze the residual for inference: no reference video exists there, so
    // evaluate the MLP once over the dataset-mean pooled embedding.
    Tensor pooled_mean({provider.dim()});
    Tensor e_b_mean({model.text_encoder().dim()});
    for (const auto& cc : cache) {
        pooled_mean.add_scaled(cc.pooled, 1.0);
        e_b_mean.add_scaled(cc.e_b, 1.0);
    }
    pooled_mean = scale(pooled_mean, 1.0 / static_cast<double>(cache.size()));
    e_b_mean = scale(e_b_mean, 1.0 / static_cast<double>(cache.size()));

    MotionCheckpoint ckpt;
    ckpt.temporal = std::move(temporal);
    ckpt.temporal.set_trainable(false);
    ckpt.cached_residual = compute_residual(pooled_mean, e_b_mean, mlp);
    ckpt.mlp = std::move(mlp);
    ckpt.injector = std::move(injector);
    ckpt.verb_token = dataset.verb;
    ckpt.motion_id = dataset.motion_id;
    ckpt.provider_name = provider.name();
    ckpt.config_snapshot = cfg.to_map();
    return ckpt;
}

void pretrain_backbone(Backbone& model, const PretrainConfig& cfg, const LogSink& log) {
    const double t0 = now_seconds();
    Rng root(cfg.seed);
    Rng spec_rng = root.fork("pretrain.spec");
    Rng timestep_rng = root.fork("pretrain.timestep");
    Rng noise_rng = root.fork("pretrain.noise");
    Rng dropout_rng = root.fork("pretrain.dropout");

    AdamW opt(cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay);

    const int H = model.config().pixel_height();
    const int W = model.config().pixel_width();
    for (int s = 0; s < cfg.steps; ++s) {
        SynthSpec spec;
        const int fg = static_cast<int>(spec_rng.uniform_int(8));
        int bg = fg == 6 ? 7 : 6;  // white unless the shape is white
        if (spec_rng.bernoulli(0.25)) bg = fg == 7 ? 6 : 7;
        spec.color = palette_rgb(fg);
        spec.background = palette_rgb(bg);
        spec.shape = static_cast<Shape>(spec_rng.uniform_int(3));
        spec.trajectory = spec_rng.bernoulli(0.5) ? Trajectory::sweep : Trajectory::lift;
        spec.jitter_seed = spec_rng.next_u64();

        const VideoClip clip = synth_motion_video(spec, cfg.frames, H, W);
        const LatentVideo z0 = model.encode_frames(clip);
        const int t = static_cast<int>(timestep_rng.uniform_int(model.config().timesteps));
        const Tensor eps = noise_rng.normal_tensor(z0.latents.shape());
        const Tensor z_t = q_sample(z0.latents, model.schedule().alpha_bar(t), eps);
        const bool dropped = dropout_rng.bernoulli(cfg.null_prompt_probability);
        const ConditionEmbedding cond = dropped
                                            ? model.text_encoder().encode_empty()
                                            : model.text_encoder().encode(spec_prompt(spec));

        Graph g;
        ParamBinder binder(g, model.params(), [](const std::string&) { return true; });
        Var pred = model.forward(g, binder, g.constant(z_t), t,
                                 g.constant(cond.token_embeddings));
        Var loss = g.mse(g.constant(eps), pred);
        g.backward(loss);
        std::map<std::string, Tensor*> params;
        for (const auto& [name, var] : binder.bound()) {
            (void)var;
            params.emplace(name, &model.mutable_params().at(name));
        }
        opt.step(params, collect_grads(g, binder.bound()), cfg.grad_clip_norm);

        if (log) {
            TrainLogRecord rec;
            rec.step = s + 1;
            rec.l_t = loss.value().item();
            rec.loss = rec.l_t;
            rec.wallclock = now_seconds() - t0;
            log(rec);
        }
    }
}

}  // namespace vmt
