#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "vmt/tensor.hpp"

namespace vmt {

/// Pixel-space video: frames [f, H, W, 3] with values in [0, 1].
struct VideoClip {
    Tensor frames;
    double fps = 8.0;

    std::int64_t frame_count() const { return frames.dim(0); }
    std::int64_t height() const { return frames.dim(1); }
    std::int64_t width() const { return frames.dim(2); }

    /// Returns a copy of frame i as [H, W, 3].
    Tensor frame(std::int64_t i) const;

    /// Checks the type invariants: rank 4, >=1 frame, 3 channels, pixel
    /// values within [0, 1]. Throws ValidationError otherwise.
    void validate() const;
};

/// Latent-space counterpart: [b, f, h, w, c]. When schedule_timestep is unset
/// the latents are clean (z0).
struct LatentVideo {
    Tensor latents;
    std::optional<int> schedule_timestep;

    std::int64_t batch() const { return latents.dim(0); }
    std::int64_t frame_count() const { return latents.dim(1); }
    std::int64_t height() const { return latents.dim(2); }
    std::int64_t width() const { return latents.dim(3); }
    std::int64_t channels() const { return latents.dim(4); }
};

// Lossless 8-bit frame files (binary PPM, P6).
void write_ppm(const std::filesystem::path& path, const Tensor& frame);
Tensor read_ppm(const std::filesystem::path& path);

/// Writes frame_0000.ppm ... into dir (created if needed).
void save_clip_frames(const std::filesystem::path& dir, const VideoClip& clip);
VideoClip load_clip_frames(const std::filesystem::path& dir, double fps);

/// Animated GIF preview (net palette, LZW-compressed). Optional output for
/// eyeballing results; PPM frames remain the lossless record.
void write_gif(const std::filesystem::path& path, const VideoClip& clip);

}  // namespace vmt
