#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vmt/appearance.hpp"
#include "vmt/autodiff.hpp"
#include "vmt/tensor.hpp"
#include "vmt/text_encoder.hpp"

namespace vmt {

/// Part-of-speech backend for locating the motion verb.
class VerbTagger {
public:
    virtual ~VerbTagger() = default;
    virtual std::string name() const = 0;
    /// Index of the main motion verb in the word tokens, or nullopt.
    virtual std::optional<int> locate(const std::vector<std::string>& tokens) const = 0;
};

/// Bundled hermetic fallback. In priority order:
///   1. the first "-ing" token directly following an auxiliary
///      (is/are/was/were/am/be/been/being),
///   2. the first token found in a small motion-verb lexicon,
///   3. the sole "-ing" token when the prompt contains exactly one.
/// Ties resolve to the earliest position.
class RuleBasedTagger : public VerbTagger {
public:
    std::string name() const override { return "rules"; }
    std::optional<int> locate(const std::vector<std::string>& tokens) const override;
};

/// Locates the motion verb; throws ValidationError when no verb is found so
/// callers can fall back to an explicit index override.
int locate_verb(const std::string& prompt, const VerbTagger& tagger);
int locate_verb(const std::vector<std::string>& tokens, const VerbTagger& tagger);

/// Arithmetic mean over the frame axis; requires >=1 embedding of equal dims.
Tensor pool_video_embedding(const std::vector<FrameEmbedding>& frame_embeddings);

/// Two-layer GELU MLP producing the residual embedding from the pooled video
/// embedding concatenated with the base verb embedding. No bias terms.
struct EnhancerMlp {
    Tensor w1;  // [d_hidden, d_img + d_text]
    Tensor w2;  // [d_text, d_hidden]

    std::int64_t d_hidden() const { return w1.dim(0); }
    std::int64_t d_text() const { return w2.dim(0); }
    std::int64_t d_input() const { return w1.dim(1); }

    /// w1 Gaussian (sigma 0.02), w2 zero so the residual starts at exactly 0.
    static EnhancerMlp init(std::uint64_t seed, int d_img, int d_text, int d_hidden = -1);

    struct Bound {
        Var w1, w2;
    };
    Bound bind(Graph& g, bool trainable) const;
};

/// Residual tied to one motion concept.
struct ResidualEmbedding {
    Tensor value;  // [d_text]
    std::string source_motion_id;
};

/// E_r = W2 GELU(W1 [pooled, e_b]).
Tensor compute_residual(const Tensor& pooled, const Tensor& e_b, const EnhancerMlp& mlp);
Var compute_residual(Graph& g, Var pooled, Var e_b, const EnhancerMlp::Bound& mlp);

/// Replaces the verb row with e_b + e_r; all other rows are untouched.
/// Throws if the condition is already enhanced or lacks a verb index.
ConditionEmbedding enhance_condition(const ConditionEmbedding& cond, const Tensor& e_r);
/// In-graph form; returns the enhanced token matrix.
Var enhance_condition(Graph& g, Var cond_tokens, int verb_index, Var e_r);

/// Squared L2 norm of the residual.
double reg_loss(const Tensor& e_r);
Var reg_loss(Graph& g, Var e_r);

}  // namespace vmt
