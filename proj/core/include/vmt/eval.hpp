#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vmt/appearance.hpp"
#include "vmt/data.hpp"
#include "vmt/sampling.hpp"
#include "vmt/training.hpp"
#include "vmt/video.hpp"

namespace vmt {

/// Whole-clip embedding used by the motion-fidelity metric.
class VideoEmbedder {
public:
    virtual ~VideoEmbedder() = default;
    virtual std::string name() const = 0;
    virtual Tensor embed_clip(const VideoClip& clip) const = 0;
};

/// Mass-weighted foreground centroid of one frame (foreground = pixels far
/// from the border-dominant background color). Returns {x, y} in pixels.
std::array<double, 2> frame_foreground_centroid(const Tensor& frame);

/// Deterministic trajectory-feature embedder: per-frame foreground centroids
/// -> frame-to-frame velocity histogram (one stillness bin plus 8 direction
/// sectors x 3 magnitude bands), flattened and L2-normalized. Reversing a
/// non-palindromic clip flips velocity directions and changes the embedding.
class TrajectoryEmbedder : public VideoEmbedder {
public:
    static constexpr int kDirections = 8;
    static constexpr int kMagnitudeBands = 3;
    static constexpr int kDim = 1 + kDirections * kMagnitudeBands;

    std::string name() const override { return "trajectory"; }
    Tensor embed_clip(const VideoClip& clip) const override;
};

/// Mean over frames of cosine(frame embedding, prompt embedding).
double clip_t(const VideoClip& clip, const std::string& prompt, const EmbeddingProvider& provider);

/// clip_t against an entity-only prompt such as "a panda".
double clip_e(const VideoClip& clip, const std::string& entity_prompt,
              const EmbeddingProvider& provider);

/// Mean cosine over consecutive frame-embedding pairs; needs >= 2 frames.
double temp_cons(const VideoClip& clip, const EmbeddingProvider& provider);

/// Motion fidelity over a set of motions: for each motion one reference clip
/// is drawn with the given rng, every generated clip is compared to it in the
/// embedder's space, and per-motion means are averaged.
double motion_fidelity(const std::map<std::string, std::vector<VideoClip>>& generated,
                       const std::map<std::string, std::vector<VideoClip>>& references,
                       const VideoEmbedder& embedder, std::uint64_t selection_seed);

/// One evaluated (motion, template) pair.
struct EvalRow {
    std::string motion;
    int template_id = 0;
    std::string prompt;
    double clip_t = 0, clip_e = 0, temp_cons = 0, mofid = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    EvalRow aggregate;  // arithmetic mean of rows; motion = "aggregate"
    std::map<std::string, std::string> metadata;

    void finalize();  // recomputes the aggregate row
    void save(const std::filesystem::path& path) const;
};

struct BenchmarkEntry {
    std::string motion_id;
    const MotionCheckpoint* checkpoint = nullptr;  // null: untuned baseline
    const MotionDataset* references = nullptr;
    std::string verb;
};

struct BenchmarkInputs {
    std::vector<BenchmarkEntry> motions;
    std::vector<std::string> subjects;
    std::vector<std::string> contexts;
    SampleConfig sample;
    std::uint64_t seed = 0;
};

/// Generates six template videos per motion and fills the full report. Per
/// motion, one reference clip is drawn (seed recorded in the metadata) and
/// every generated clip's motion embedding is compared against it.
EvalReport evaluate_benchmark(const Backbone& model, const BenchmarkInputs& inputs,
                              const EmbeddingProvider& provider, const VideoEmbedder& embedder);

/// Per-frame histogram over the fixed 8-color palette (soft assignment by
/// nearest palette entry), normalized to sum 1. Used by the decoupling checks.
Tensor frame_palette_histogram(const Tensor& frame);
double histogram_l1_distance(const Tensor& a, const Tensor& b);
/// Histogram of a pure single-palette-color frame.
Tensor palette_color_histogram(int palette_index);

}  // namespace vmt
