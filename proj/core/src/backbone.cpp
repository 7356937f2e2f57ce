#include "vmt/backbone.hpp"

#include <cmath>
#include <sstream>

#include "vmt/archive.hpp"
#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

namespace {

constexpr int kTimeDim = 64;

void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

}  // namespace

std::uint64_t param_checksum(const ParamStore& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : params) {
        h = fnv1a_hash(name.data(), name.size(), h);
        h = fnv1a_hash(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double), h);
    }
    return h;
}

ParamBinder::ParamBinder(Graph& g, const ParamStore& params,
                         std::function<bool(const std::string&)> trainable)
    : g_(g), params_(params), trainable_(std::move(trainable)) {}

Var ParamBinder::operator()(const std::string& path) {
    auto it = bound_.find(path);
    if (it != bound_.end()) return it->second;
    auto pit = params_.find(path);
    if (pit == params_.end()) {
        throw ValidationError("parameter not found: " + path);
    }
    const bool rg = trainable_ && trainable_(path);
    Var v = g_.leaf(pit->second, rg);
    bound_.emplace(path, v);
    return v;
}

Tensor timestep_features(int t, int dim) {
    Tensor out({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

Var to_temporal_layout(Graph& g, Var x, int f, int h, int w) {
    // [f, h*w, C] -> [h*w, f, C]
    const std::int64_t c = x.value().dim(-1);
    Var r = g.reshape(x, {f, static_cast<std::int64_t>(h) * w, c});
    return g.permute(r, {1, 0, 2});
}

Var to_spatial_layout(Graph& g, Var x, int f, int h, int w) {
    // [h*w, f, C] -> [f, h*w, C]
    const std::int64_t c = x.value().dim(-1);
    Var r = g.reshape(x, {static_cast<std::int64_t>(h) * w, f, c});
    return g.permute(r, {1, 0, 2});
}

Backbone::Backbone(std::uint64_t seed, BackboneConfig config)
    : seed_(seed),
      config_(config),
      schedule_(DiffusionSchedule::linear(config.timesteps, config.beta_start, config.beta_end)),
      autoencoder_(seed),
      text_encoder_(seed) {}

Backbone Backbone::seeded(std::uint64_t seed, BackboneConfig config) {
    Backbone b(seed, config);
    b.init_params();
    return b;
}

std::vector<std::string> Backbone::spatial_block_prefixes() const {
    return {"down.0.spatial", "down.1.spatial", "mid.spatial", "up.1.spatial", "up.0.spatial"};
}

std::vector<std::string> Backbone::temporal_block_prefixes() const {
    return {"down.0.temporal", "down.1.temporal", "mid.temporal", "up.1.temporal",
            "up.0.temporal"};
}

int Backbone::block_width(const std::string& prefix) const {
    if (prefix.find("down.0.") == 0 || prefix.find("up.0.") == 0) return config_.width0;
    if (prefix.find("down.1.") == 0 || prefix.find("up.1.") == 0 ||
        prefix.find("mid.") == 0) {
        return config_.width1;
    }
    throw ValidationError("unknown block prefix: " + prefix);
}

void Backbone::init_params() {
    Rng root = Rng(seed_).fork("backbone");
    auto gauss = [&root](const std::string& name, std::vector<std::int64_t> shape, double sigma) {
        return root.fork(name).normal_tensor(std::move(shape), sigma);
    };
    auto& P = params_;
    const int c_lat = FrameAutoencoder::kLatentChannels;
    const int w0 = config_.width0;
    const int w1 = config_.width1;
    const std::int64_t hw0 = static_cast<std::int64_t>(config_.latent_height) * config_.latent_width;
    const std::int64_t hw1 = hw0 / 4;

    P["time_embed.w1.weight"] = gauss("time_embed.w1", {kTimeDim, kTimeDim}, 1.0 / 8.0);
    P["time_embed.w1.bias"] = Tensor::zeros({kTimeDim});
    P["time_embed.w2.weight"] = gauss("time_embed.w2", {kTimeDim, kTimeDim}, 1.0 / 8.0);
    P["time_embed.w2.bias"] = Tensor::zeros({kTimeDim});

    P["lin_in.weight"] = gauss("lin_in", {w0, c_lat}, 0.5);
    P["lin_in.bias"] = Tensor::zeros({w0});
    P["lin_out.weight"] = gauss("lin_out", {c_lat, w0}, 0.02);
    P["lin_out.bias"] = Tensor::zeros({c_lat});

    P["spatial_pos.0"] = gauss("spatial_pos.0", {hw0, w0}, 0.1);
    P["spatial_pos.1"] = gauss("spatial_pos.1", {hw1, w1}, 0.1);

    P["downsample.proj.weight"] = gauss("downsample.proj", {w1, 4 * w0}, 1.0 / std::sqrt(4.0 * w0));
    P["downsample.proj.bias"] = Tensor::zeros({w1});
    P["upsample.proj.weight"] = gauss("upsample.proj", {4 * w0, w1}, 1.0 / std::sqrt(1.0 * w1));
    P["upsample.proj.bias"] = Tensor::zeros({4 * w0});

    auto init_common = [&](const std::string& p, int c) {
        const double ws = 1.0 / std::sqrt(static_cast<double>(c));
        P[p + ".ln1.gamma"] = Tensor::full({c}, 1.0);
        P[p + ".ln1.beta"] = Tensor::zeros({c});
        P[p + ".attn.wq.weight"] = gauss(p + ".attn.wq", {c, c}, ws);
        P[p + ".attn.wk.weight"] = gauss(p + ".attn.wk", {c, c}, ws);
        P[p + ".attn.wv.weight"] = gauss(p + ".attn.wv", {c, c}, ws);
        P[p + ".attn.wo.weight"] = gauss(p + ".attn.wo", {c, c}, 0.5 * ws);
        P[p + ".ln3.gamma"] = Tensor::full({c}, 1.0);
        P[p + ".ln3.beta"] = Tensor::zeros({c});
        P[p + ".ffn.w1.weight"] = gauss(p + ".ffn.w1", {4 * c, c}, ws);
        P[p + ".ffn.w1.bias"] = Tensor::zeros({4 * c});
        P[p + ".ffn.w2.weight"] = gauss(p + ".ffn.w2", {c, 4 * c}, 0.5 / std::sqrt(4.0 * c));
        P[p + ".ffn.w2.bias"] = Tensor::zeros({c});
    };
    for (const auto& p : spatial_block_prefixes()) {
        const int c = block_width(p);
        const double ws = 1.0 / std::sqrt(static_cast<double>(c));
        init_common(p, c);
        P[p + ".time.weight"] = gauss(p + ".time", {c, kTimeDim}, 1.0 / 8.0);
        P[p + ".time.bias"] = Tensor::zeros({c});
        P[p + ".ln2.gamma"] = Tensor::full({c}, 1.0);
        P[p + ".ln2.beta"] = Tensor::zeros({c});
        P[p + ".xattn.wq.weight"] = gauss(p + ".xattn.wq", {c, c}, ws);
        P[p + ".xattn.wk.weight"] =
            gauss(p + ".xattn.wk", {c, TextEncoder::kDim}, 1.0 / std::sqrt(1.0 * TextEncoder::kDim));
        P[p + ".xattn.wv.weight"] =
            gauss(p + ".xattn.wv", {c, TextEncoder::kDim}, 1.0 / std::sqrt(1.0 * TextEncoder::kDim));
        P[p + ".xattn.wo.weight"] = gauss(p + ".xattn.wo", {c, c}, 0.5 * ws);
    }
    for (const auto& p : temporal_block_prefixes()) {
        const int c = block_width(p);
        init_common(p, c);
        P[p + ".pos"] = gauss(p + ".pos", {config_.max_frames, c}, 0.1);
    }
}

namespace {

/// Shared machinery for one forward pass.
struct ForwardCtx {
    Graph& g;
    ParamBinder& B;
    const std::vector<const LoraVarMap*>& adapters;
    const InjectionVars* injection;
    ActivationProbe* probe;
    int heads;
    Var t_emb;  // [kTimeDim]
    Var cond;   // [N, d_text]

    void record(const std::string& site, Var v) const {
        if (probe) probe->emplace_back(site, v.value());
    }

    /// Linear with any attached low-rank adapters for this path.
    Var proj(const std::string& path, Var x) const {
        Var y = g.linear(x, B(path + ".weight"));
        for (const auto* a : adapters) {
            auto it = a->pairs.find(path);
            if (it == a->pairs.end()) continue;
            Var lo = g.linear(g.linear(x, it->second.first), it->second.second);
            y = g.add_scaled(y, lo, a->scale);
        }
        return y;
    }

    Var proj_bias(const std::string& path, Var x) const {
        return g.add_bias(proj(path, x), B(path + ".bias"));
    }

    /// Multi-head self-attention over the middle axis of [G, L, C].
    Var self_attention(const std::string& prefix, Var x) const {
        const std::int64_t G = x.value().dim(0);
        const std::int64_t L = x.value().dim(1);
        const std::int64_t C = x.value().dim(2);
        const std::int64_t dh = C / heads;
        auto split = [&](Var v) {
            Var r = g.reshape(v, {G, L, heads, dh});
            return g.reshape(g.permute(r, {0, 2, 1, 3}), {G * heads, L, dh});
        };
        Var q = split(proj(prefix + ".attn.wq", x));
        Var k = split(proj(prefix + ".attn.wk", x));
        Var v = split(proj(prefix + ".attn.wv", x));
        Var scores = g.scale(g.bmm(q, g.permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
        Var ctx = g.bmm(g.softmax_last(scores), v);
        ctx = g.reshape(g.permute(g.reshape(ctx, {G, heads, L, dh}), {0, 2, 1, 3}), {G, L, C});
        return proj(prefix + ".attn.wo", ctx);
    }

    /// Cross-attention from [f, L, C] queries to the shared text tokens.
    Var cross_attention(const std::string& prefix, Var x) const {
        const std::int64_t f = x.value().dim(0);
        const std::int64_t L = x.value().dim(1);
        const std::int64_t C = x.value().dim(2);
        const std::int64_t dh = C / heads;
        const std::int64_t n_tok = cond.value().dim(0);
        Var q = proj(prefix + ".xattn.wq", x);               // [f, L, C]
        q = g.reshape(q, {f * L, heads, dh});
        q = g.reshape(g.permute(q, {1, 0, 2}), {heads, f * L, dh});
        Var k = proj(prefix + ".xattn.wk", cond);            // [N, C]
        Var v = proj(prefix + ".xattn.wv", cond);
        k = g.permute(g.reshape(k, {n_tok, heads, dh}), {1, 2, 0});  // [H, dh, N]
        v = g.permute(g.reshape(v, {n_tok, heads, dh}), {1, 0, 2});  // [H, N, dh]
        Var scores = g.scale(g.bmm(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
        Var ctx = g.bmm(g.softmax_last(scores), v);          // [H, f*L, dh]
        ctx = g.reshape(g.permute(ctx, {1, 0, 2}), {f, L, C});
        return proj(prefix + ".xattn.wo", ctx);
    }

    Var ffn(const std::string& prefix, Var x) const {
        Var h = g.gelu(g.add_bias(proj(prefix + ".ffn.w1", x), B(prefix + ".ffn.w1.bias")));
        return g.add_bias(proj(prefix + ".ffn.w2", h), B(prefix + ".ffn.w2.bias"));
    }

    Var layer_norm(const std::string& name, Var x) const {
        return g.layer_norm(x, B(name + ".gamma"), B(name + ".beta"));
    }

    /// Spatial transformer block on [f, h*w, C].
    Var spatial_block(const std::string& prefix, Var x) const {
        Var tv = g.reshape(g.linear(g.reshape(t_emb, {1, kTimeDim}), B(prefix + ".time.weight"),
                                    B(prefix + ".time.bias")),
                           {x.value().dim(2)});
        Var h = g.add_bias(x, tv);
        h = g.add(h, self_attention(prefix, layer_norm(prefix + ".ln1", h)));
        h = g.add(h, cross_attention(prefix, layer_norm(prefix + ".ln2", h)));
        h = g.add(h, ffn(prefix, layer_norm(prefix + ".ln3", h)));
        return h;
    }

    /// Temporal transformer block on [h*w, f, C]. A single frame carries no
    /// temporal relations; the block is the identity there.
    Var temporal_block(const std::string& prefix, Var x) const {
        const std::int64_t f = x.value().dim(1);
        if (f == 1) return x;
        const std::int64_t s = x.value().dim(0);
        const std::int64_t c = x.value().dim(2);
        Var pos = g.slice_rows(B(prefix + ".pos"), 0, f);
        Var h = g.reshape(g.add_bias(g.reshape(x, {s, f * c}), g.reshape(pos, {f * c})),
                          {s, f, c});
        h = g.add(h, self_attention(prefix, layer_norm(prefix + ".ln1", h)));
        h = g.add(h, ffn(prefix, layer_norm(prefix + ".ln3", h)));
        return h;
    }

    /// Broadcast-add of the projected appearance embedding, applied in
    /// temporal layout right before the temporal transformer.
    Var inject(const std::string& temporal_prefix, Var x) const {
        if (!injection) return x;
        auto it = injection->w_p.find(temporal_prefix);
        if (it == injection->w_p.end()) {
            throw ValidationError("appearance injection: no projection for block " +
                                  temporal_prefix);
        }
        const std::int64_t d = injection->embedding.value().numel();
        Var u = g.reshape(
            g.linear(g.reshape(injection->embedding, {1, d}), it->second),
            {x.value().dim(2)});
        return g.add_bias(x, u);
    }

    /// Spatial block, then injection + temporal block, staying in spatial layout.
    Var level_pair(const std::string& base, Var x, int f, int h, int w) const {
        Var s = spatial_block(base + ".spatial", x);
        record(base + ".spatial", s);
        Var t = to_temporal_layout(g, s, f, h, w);
        t = inject(base + ".temporal", t);
        record(base + ".inject", t);
        t = temporal_block(base + ".temporal", t);
        Var out = to_spatial_layout(g, t, f, h, w);
        record(base + ".temporal", out);
        return out;
    }
};

}  // namespace

Var Backbone::forward(Graph& g, ParamBinder& binder, Var z_t, int t, Var cond,
                      const std::vector<const LoraVarMap*>& adapters,
                      const InjectionVars* injection, ActivationProbe* probe) const {
    const Tensor& zv = z_t.value();
    require(zv.rank() == 5, "forward: z_t must be [1,f,h,w,c], got " + zv.shape_str());
    require(zv.dim(0) == 1, "forward: batch dim must be 1");
    const int f = static_cast<int>(zv.dim(1));
    const int h = static_cast<int>(zv.dim(2));
    const int w = static_cast<int>(zv.dim(3));
    require(f >= 1 && f <= config_.max_frames, "forward: frame count out of range");
    require(h == config_.latent_height && w == config_.latent_width,
            "forward: latent size mismatch");
    require(zv.dim(4) == FrameAutoencoder::kLatentChannels, "forward: latent channel mismatch");
    if (t < 0 || t >= config_.timesteps) {
        throw ValidationError("forward: timestep out of range");
    }
    const Tensor& cv = cond.value();
    require(cv.rank() == 2 && cv.dim(1) == TextEncoder::kDim, "forward: bad condition shape");
    if (cv.dim(0) > TextEncoder::kMaxTokens) {
        throw ValidationError("forward: condition token count exceeds model max");
    }
    for (const auto* a : adapters) {
        for (const auto& [path, pair] : a->pairs) {
            if (params_.find(path + ".weight") == params_.end()) {
                throw ValidationError("adapter targets non-existent layer: " + path);
            }
            (void)pair;
        }
    }

    ForwardCtx ctx{g, binder, adapters, injection, probe, config_.heads, Var{}, cond};
    Var tf = g.constant(timestep_features(t, kTimeDim));
    Var te = g.gelu(g.add_bias(g.linear(g.reshape(tf, {1, kTimeDim}), binder("time_embed.w1.weight")),
                               binder("time_embed.w1.bias")));
    ctx.t_emb = g.reshape(
        g.add_bias(g.linear(te, binder("time_embed.w2.weight")), binder("time_embed.w2.bias")),
        {kTimeDim});

    const std::int64_t hw0 = static_cast<std::int64_t>(h) * w;
    const int h1 = h / 2, w1 = w / 2;
    const std::int64_t hw1 = hw0 / 4;
    const std::int64_t c0 = config_.width0, c1 = config_.width1;

    // Stem: per-position channel lift plus level-0 positional table.
    Var x = g.reshape(z_t, {static_cast<std::int64_t>(f) * hw0, zv.dim(4)});
    x = g.add_bias(g.linear(x, binder("lin_in.weight")), binder("lin_in.bias"));
    x = g.reshape(x, {f, hw0, c0});
    x = g.reshape(g.add_bias(g.reshape(x, {f, hw0 * c0}),
                             g.reshape(binder("spatial_pos.0"), {hw0 * c0})),
                  {f, hw0, c0});
    ctx.record("lin_in", x);

    Var s0 = ctx.level_pair("down.0", x, f, h, w);

    // Downsample: 2x2 space-to-depth then channel projection.
    Var d = g.reshape(s0, {f, h, w, c0});
    d = g.reshape(d, {f, h1, 2, w1, 2, c0});
    d = g.permute(d, {0, 1, 3, 2, 4, 5});
    d = g.reshape(d, {f, hw1, 4 * c0});
    d = g.add_bias(g.linear(d, binder("downsample.proj.weight")), binder("downsample.proj.bias"));
    d = g.reshape(g.add_bias(g.reshape(d, {f, hw1 * c1}),
                             g.reshape(binder("spatial_pos.1"), {hw1 * c1})),
                  {f, hw1, c1});

    Var s1 = ctx.level_pair("down.1", d, f, h1, w1);
    Var m = ctx.level_pair("mid", s1, f, h1, w1);
    Var u1 = ctx.level_pair("up.1", g.add(m, s1), f, h1, w1);

    // Upsample: channel projection then depth-to-space.
    Var u = g.add_bias(g.linear(u1, binder("upsample.proj.weight")), binder("upsample.proj.bias"));
    u = g.reshape(u, {f, h1, w1, 2, 2, c0});
    u = g.permute(u, {0, 1, 3, 2, 4, 5});
    u = g.reshape(u, {f, hw0, c0});

    Var u0 = ctx.level_pair("up.0", g.add(u, s0), f, h, w);

    Var out = g.add_bias(g.linear(g.reshape(u0, {static_cast<std::int64_t>(f) * hw0, c0}),
                                  binder("lin_out.weight")),
                         binder("lin_out.bias"));
    out = g.reshape(out, {1, f, h, w, zv.dim(4)});
    ctx.record("lin_out", out);
    return out;
}

Tensor Backbone::predict_noise(const Tensor& z_t, int t, const ConditionEmbedding& cond,
                               const std::vector<const LoraVarMap*>& adapters,
                               ActivationProbe* probe) const {
    Graph g;
    ParamBinder binder(g, params_);
    Var z = g.constant(z_t);
    Var c = g.constant(cond.token_embeddings);
    return forward(g, binder, z, t, c, adapters, nullptr, probe).value();
}

void Backbone::save(const std::filesystem::path& path) const {
    TensorArchive a;
    a.meta["kind"] = "backbone";
    a.meta["seed"] = std::to_string(seed_);
    a.meta["width0"] = std::to_string(config_.width0);
    a.meta["width1"] = std::to_string(config_.width1);
    a.meta["heads"] = std::to_string(config_.heads);
    a.meta["latent_height"] = std::to_string(config_.latent_height);
    a.meta["latent_width"] = std::to_string(config_.latent_width);
    a.meta["frames"] = std::to_string(config_.frames);
    a.meta["max_frames"] = std::to_string(config_.max_frames);
    a.meta["timesteps"] = std::to_string(config_.timesteps);
    a.tensors = params_;
    a.save(path);
}

Backbone Backbone::load(const std::filesystem::path& path) {
    TensorArchive a = TensorArchive::load(path);
    if (a.meta_or("kind", "") != "backbone") {
        throw ValidationError("not a backbone archive: " + path.string());
    }
    BackboneConfig cfg;
    cfg.width0 = std::stoi(a.meta_at("width0"));
    cfg.width1 = std::stoi(a.meta_at("width1"));
    cfg.heads = std::stoi(a.meta_at("heads"));
    cfg.latent_height = std::stoi(a.meta_at("latent_height"));
    cfg.latent_width = std::stoi(a.meta_at("latent_width"));
    cfg.frames = std::stoi(a.meta_at("frames"));
    cfg.max_frames = std::stoi(a.meta_at("max_frames"));
    cfg.timesteps = std::stoi(a.meta_at("timesteps"));
    Backbone b(std::stoull(a.meta_at("seed")), cfg);
    b.params_ = std::move(a.tensors);
    return b;
}

}  // namespace vmt
