#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vmt/autodiff.hpp"
#include "vmt/autoencoder.hpp"
#include "vmt/schedule.hpp"
#include "vmt/tensor.hpp"
#include "vmt/text_encoder.hpp"
#include "vmt/video.hpp"

namespace vmt {

using ParamStore = std::map<std::string, Tensor>;

std::uint64_t param_checksum(const ParamStore& params);

/// Binds named parameters into a graph, one leaf per path. The trainable
/// predicate decides which leaves require gradients.
class ParamBinder {
public:
    ParamBinder(Graph& g, const ParamStore& params,
                std::function<bool(const std::string&)> trainable = {});

    Var operator()(const std::string& path);
    const std::map<std::string, Var>& bound() const { return bound_; }

private:
    Graph& g_;
    const ParamStore& params_;
    std::function<bool(const std::string&)> trainable_;
    std::map<std::string, Var> bound_;
};

/// Low-rank adapter pairs bound into a graph, keyed by the layer path they
/// extend: y = base(x) + scale * up(down(x)).
struct LoraVarMap {
    double scale = 1.0;
    std::map<std::string, std::pair<Var, Var>> pairs;  // path -> (down, up)
};

/// Appearance embedding and per-block projection weights bound into a graph;
/// the projected vector is broadcast-added before each temporal transformer.
struct InjectionVars {
    Var embedding;                   // [d_img]
    std::map<std::string, Var> w_p;  // temporal block prefix -> [C, d_img]
};

/// Captures intermediate activations by site name, in execution order.
using ActivationProbe = std::vector<std::pair<std::string, Tensor>>;

struct BackboneConfig {
    int width0 = 64;
    int width1 = 128;
    int heads = 4;
    int latent_height = 8;
    int latent_width = 8;
    int frames = 8;  // desk-scale clip length
    int max_frames = 32;
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;

    int pixel_height() const { return latent_height * FrameAutoencoder::kDownFactor; }
    int pixel_width() const { return latent_width * FrameAutoencoder::kDownFactor; }
};

/// Miniature text-conditioned latent video diffusion model. Spatial blocks
/// run per-frame attention over spatial positions plus cross-attention to the
/// text tokens; temporal blocks run per-position attention over the frame
/// axis. All base weights are derived from the seed and treated as frozen by
/// the adaptation stages.
class Backbone {
public:
    static Backbone seeded(std::uint64_t seed, BackboneConfig config = {});

    const BackboneConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }
    const DiffusionSchedule& schedule() const { return schedule_; }
    const FrameAutoencoder& autoencoder() const { return autoencoder_; }
    const TextEncoder& text_encoder() const { return text_encoder_; }

    const ParamStore& params() const { return params_; }
    ParamStore& mutable_params() { return params_; }
    std::uint64_t checksum() const { return param_checksum(params_); }

    std::vector<std::string> spatial_block_prefixes() const;
    std::vector<std::string> temporal_block_prefixes() const;
    int block_width(const std::string& prefix) const;

    /// Core denoiser. z_t [1,f,h,w,c], cond [N,d_text] (graph vars); returns
    /// the noise prediction with the same shape as z_t. Empty adapter list and
    /// null injection reproduce the frozen base model exactly.
    Var forward(Graph& g, ParamBinder& binder, Var z_t, int t, Var cond,
                const std::vector<const LoraVarMap*>& adapters = {},
                const InjectionVars* injection = nullptr,
                ActivationProbe* probe = nullptr) const;

    /// Convenience inference path over plain tensors.
    Tensor predict_noise(const Tensor& z_t, int t, const ConditionEmbedding& cond,
                         const std::vector<const LoraVarMap*>& adapters = {},
                         ActivationProbe* probe = nullptr) const;

    LatentVideo encode_frames(const VideoClip& clip) const { return autoencoder_.encode(clip); }
    VideoClip decode_latents(const LatentVideo& lat, double fps = 8.0) const {
        return autoencoder_.decode(lat, fps);
    }

    void save(const std::filesystem::path& path) const;
    static Backbone load(const std::filesystem::path& path);

private:
    Backbone(std::uint64_t seed, BackboneConfig config);

    void init_params();

    std::uint64_t seed_;
    BackboneConfig config_;
    ParamStore params_;
    DiffusionSchedule schedule_;
    FrameAutoencoder autoencoder_;
    TextEncoder text_encoder_;
};

/// Sinusoidal timestep features of the given width.
Tensor timestep_features(int t, int dim);

// Layout helpers between the two hidden-state arrangements:
//   spatial layout  [f, h*w, C]   (per-frame attention over positions)
//   temporal layout [h*w, f, C]   (per-position attention over frames)
Var to_temporal_layout(Graph& g, Var x, int f, int h, int w);
Var to_spatial_layout(Graph& g, Var x, int f, int h, int w);

}  // namespace vmt
