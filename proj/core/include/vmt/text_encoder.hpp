#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vmt/tensor.hpp"

namespace vmt {

/// Per-token text embeddings used as cross-attention conditioning.
struct ConditionEmbedding {
    Tensor token_embeddings;  // [N, d_text]
    std::optional<int> verb_index;
    bool enhanced = false;

    std::int64_t token_count() const { return token_embeddings.dim(0); }
    std::int64_t dim() const { return token_embeddings.dim(1); }
    void validate() const;
};

/// Frozen seeded mini-transformer text encoder. Words are lowercased, hashed
/// into a fixed embedding table, padded to kMaxTokens, combined with a
/// positional table and passed through two self-attention encoder layers, so
/// a token's output row depends on its full-prompt context.
class TextEncoder {
public:
    static constexpr int kMaxTokens = 24;
    static constexpr int kDim = 64;
    static constexpr int kVocabBuckets = 4096;

    explicit TextEncoder(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    int dim() const { return kDim; }
    int max_tokens() const { return kMaxTokens; }

    /// Lowercase word tokens; punctuation is dropped, digits kept.
    static std::vector<std::string> tokenize(const std::string& text);

    /// Throws ValidationError when the prompt exceeds kMaxTokens words.
    ConditionEmbedding encode(const std::string& prompt) const;
    ConditionEmbedding encode_tokens(const std::vector<std::string>& tokens) const;

    /// Unconditional (empty-prompt) embedding; all rows are padding slots.
    ConditionEmbedding encode_empty() const;

private:
    Tensor encoder_layer(const Tensor& x, int layer) const;

    std::uint64_t seed_;
    Tensor vocab_;           // [kVocabBuckets, kDim]
    Tensor positional_;      // [kMaxTokens, kDim]
    Tensor pad_;             // [kDim]
    struct Layer {
        Tensor ln1_g, ln1_b, wq, wk, wv, wo;
        Tensor ln2_g, ln2_b, ff_w1, ff_b1, ff_w2, ff_b2;
    };
    std::vector<Layer> layers_;
};

}  // namespace vmt
