#pragma once

#include <cstdint>

#include "vmt/tensor.hpp"
#include "vmt/video.hpp"

namespace vmt {

/// Frozen per-patch linear frame autoencoder. Each non-overlapping
/// kDownFactor x kDownFactor pixel patch (48 values) is projected onto
/// kLatentChannels orthonormal basis vectors: the three per-channel patch
/// means plus one seeded direction orthonormalized against them. The decoder
/// is the transpose, so patch means survive the round trip exactly and only
/// within-patch detail is lost.
///
/// Latents are centered at mid-gray and scaled so saturated flat patches land
/// near +/-1.
///
/// Measured round-trip error (seed 0x5eed, fixed before the rest of the build;
/// see the backbone tests): uniform-noise clips mean |err| <= 0.26, max |err|
/// <= 0.75; piecewise-flat synthetic clips mean |err| <= 0.03.
class FrameAutoencoder {
public:
    static constexpr int kDownFactor = 4;
    static constexpr int kLatentChannels = 4;

    explicit FrameAutoencoder(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    /// [f,H,W,3] -> [1,f,H/4,W/4,4]; requires H, W divisible by kDownFactor.
    LatentVideo encode(const VideoClip& clip) const;

    /// Clean latents -> pixel clip clamped to [0,1].
    VideoClip decode(const LatentVideo& latents, double fps = 8.0) const;

    /// Encoder basis, kLatentChannels x (kDownFactor^2 * 3), orthonormal rows.
    const Tensor& basis() const { return basis_; }

private:
    std::uint64_t seed_;
    Tensor basis_;
};

}  // namespace vmt
