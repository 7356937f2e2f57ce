#include "vmt/autoencoder.hpp"

#include <algorithm>
#include <cmath>

#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

namespace {

constexpr int kPatch = FrameAutoencoder::kDownFactor;
constexpr int kPatchVals = kPatch * kPatch * 3;
constexpr double kLatentScale = 0.5;

}  // namespace

FrameAutoencoder::FrameAutoencoder(std::uint64_t seed) : seed_(seed) {
    basis_ = Tensor({kLatentChannels, kPatchVals});
    // Rows 0..2: per-channel DC over the patch, already orthonormal.
    const double dc = 1.0 / std::sqrt(static_cast<double>(kPatch * kPatch));
    for (int ch = 0; ch < 3; ++ch) {
        for (int p = 0; p < kPatch * kPatch; ++p) basis_.at({ch, p * 3 + ch}) = dc;
    }
    // Row 3: seeded direction, Gram-Schmidt against the DC rows.
    Rng rng = Rng(seed).fork("autoencoder");
    Tensor extra = rng.normal_tensor({kPatchVals});
    for (int ch = 0; ch < 3; ++ch) {
        double proj = 0;
        for (int j = 0; j < kPatchVals; ++j) proj += extra[j] * basis_.at({ch, j});
        for (int j = 0; j < kPatchVals; ++j) extra[j] -= proj * basis_.at({ch, j});
    }
    const double norm = extra.l2_norm();
    for (int j = 0; j < kPatchVals; ++j) basis_.at({3, j}) = extra[j] / norm;
}

LatentVideo FrameAutoencoder::encode(const VideoClip& clip) const {
    clip.validate();
    const std::int64_t f = clip.frame_count();
    const std::int64_t H = clip.height();
    const std::int64_t W = clip.width();
    if (H % kPatch != 0 || W % kPatch != 0) {
        throw ShapeError("encode: frame size " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by downsampling factor " + std::to_string(kPatch));
    }
    const std::int64_t h = H / kPatch, w = W / kPatch;
    Tensor latents({1, f, h, w, kLatentChannels});
    double patch[kPatchVals];
    for (std::int64_t fi = 0; fi < f; ++fi) {
        const double* fr = clip.frames.data() + fi * H * W * 3;
        for (std::int64_t py = 0; py < h; ++py) {
            for (std::int64_t px = 0; px < w; ++px) {
                int k = 0;
                for (int dy = 0; dy < kPatch; ++dy) {
                    const double* rowp = fr + ((py * kPatch + dy) * W + px * kPatch) * 3;
                    for (int dx = 0; dx < kPatch * 3; ++dx) patch[k++] = rowp[dx] - 0.5;
                }
                double* zp = latents.data() + (((fi * h + py) * w) + px) * kLatentChannels;
                for (int c = 0; c < kLatentChannels; ++c) {
                    const double* row = basis_.data() + c * kPatchVals;
                    double acc = 0;
                    for (int j = 0; j < kPatchVals; ++j) acc += row[j] * patch[j];
                    zp[c] = kLatentScale * acc;
                }
            }
        }
    }
    return LatentVideo{std::move(latents), std::nullopt};
}

VideoClip FrameAutoencoder::decode(const LatentVideo& lat, double fps) const {
    const Tensor& z = lat.latents;
    if (z.rank() != 5 || z.dim(4) != kLatentChannels) {
        throw ShapeError("decode: latents must be [b,f,h,w," + std::to_string(kLatentChannels) +
                         "], got " + z.shape_str());
    }
    if (z.dim(0) != 1) throw ShapeError("decode: batch must be 1");
    const std::int64_t f = z.dim(1), h = z.dim(2), w = z.dim(3);
    const std::int64_t H = h * kPatch, W = w * kPatch;
    Tensor frames({f, H, W, 3});
    for (std::int64_t fi = 0; fi < f; ++fi) {
        double* fr = frames.data() + fi * H * W * 3;
        for (std::int64_t py = 0; py < h; ++py) {
            for (std::int64_t px = 0; px < w; ++px) {
                const double* zp = z.data() + (((fi * h + py) * w) + px) * kLatentChannels;
                double patch[kPatchVals] = {};
                for (int c = 0; c < kLatentChannels; ++c) {
                    const double* row = basis_.data() + c * kPatchVals;
                    const double coeff = zp[c] / kLatentScale;
                    for (int j = 0; j < kPatchVals; ++j) patch[j] += coeff * row[j];
                }
                int k = 0;
                for (int dy = 0; dy < kPatch; ++dy) {
                    double* rowp = fr + ((py * kPatch + dy) * W + px * kPatch) * 3;
                    for (int dx = 0; dx < kPatch * 3; ++dx) {
                        rowp[dx] = std::clamp(patch[k++] + 0.5, 0.0, 1.0);
                    }
                }
            }
        }
    }
    return VideoClip{std::move(frames), fps};
}

}  // namespace vmt
