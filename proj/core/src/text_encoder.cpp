#include "vmt/text_encoder.hpp"

#include <cctype>
#include <cmath>

#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

namespace {

constexpr int kHeads = 4;
constexpr int kLayers = 2;

std::uint64_t word_bucket(const std::string& w) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : w) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h % TextEncoder::kVocabBuckets;
}

void softmax_rows(Tensor& x) {
    const std::int64_t c = x.dim(-1);
    const std::int64_t rows = x.numel() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
        double* p = x.data() + r * c;
        double mx = p[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, p[j]);
        double sum = 0;
        for (std::int64_t j = 0; j < c; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (std::int64_t j = 0; j < c; ++j) p[j] /= sum;
    }
}

Tensor layernorm_rows(const Tensor& x, const Tensor& g, const Tensor& b) {
    const std::int64_t c = x.dim(-1);
    const std::int64_t rows = x.numel() / c;
    Tensor out(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * c;
        double mean = 0;
        for (std::int64_t j = 0; j < c; ++j) mean += xr[j];
        mean /= static_cast<double>(c);
        double var = 0;
        for (std::int64_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        double* yr = out.data() + r * c;
        for (std::int64_t j = 0; j < c; ++j) yr[j] = (xr[j] - mean) * inv * g[j] + b[j];
    }
    return out;
}

Tensor gelu_plain(const Tensor& x) {
    Tensor out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        out[i] = x[i] * 0.5 * (1.0 + std::erf(x[i] * 0.7071067811865475244));
    }
    return out;
}

}  // namespace

void ConditionEmbedding::validate() const {
    if (token_embeddings.rank() != 2) {
        throw ValidationError("ConditionEmbedding: embeddings must be [N, d]");
    }
    if (verb_index) {
        if (*verb_index < 0 || *verb_index >= token_count()) {
            throw ValidationError("ConditionEmbedding: verb_index out of range");
        }
    }
    if (enhanced && !verb_index) {
        throw ValidationError("ConditionEmbedding: enhanced requires verb_index");
    }
}

TextEncoder::TextEncoder(std::uint64_t seed) : seed_(seed) {
    Rng root = Rng(seed).fork("text_encoder");
    const double emb_sigma = 0.25;
    vocab_ = root.fork("vocab").normal_tensor({kVocabBuckets, kDim}, emb_sigma);
    positional_ = root.fork("pos").normal_tensor({kMaxTokens, kDim}, 0.1);
    pad_ = root.fork("pad").normal_tensor({kDim}, emb_sigma);
    const double w_sigma = 1.0 / std::sqrt(static_cast<double>(kDim));
    for (int l = 0; l < kLayers; ++l) {
        Rng lr = root.fork("layer" + std::to_string(l));
        Layer layer;
        layer.ln1_g = Tensor::full({kDim}, 1.0);
        layer.ln1_b = Tensor::zeros({kDim});
        layer.wq = lr.fork("wq").normal_tensor({kDim, kDim}, w_sigma);
        layer.wk = lr.fork("wk").normal_tensor({kDim, kDim}, w_sigma);
        layer.wv = lr.fork("wv").normal_tensor({kDim, kDim}, w_sigma);
        layer.wo = lr.fork("wo").normal_tensor({kDim, kDim}, 0.5 * w_sigma);
        layer.ln2_g = Tensor::full({kDim}, 1.0);
        layer.ln2_b = Tensor::zeros({kDim});
        layer.ff_w1 = lr.fork("ff_w1").normal_tensor({4 * kDim, kDim}, w_sigma);
        layer.ff_b1 = Tensor::zeros({4 * kDim});
        layer.ff_w2 = lr.fork("ff_w2").normal_tensor({kDim, 4 * kDim},
                                                     0.5 / std::sqrt(4.0 * kDim));
        layer.ff_b2 = Tensor::zeros({kDim});
        layers_.push_back(std::move(layer));
    }
}

std::vector<std::string> TextEncoder::tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

Tensor TextEncoder::encoder_layer(const Tensor& x, int l) const {
    const Layer& L = layers_[static_cast<std::size_t>(l)];
    const std::int64_t n = x.dim(0);
    const std::int64_t dh = kDim / kHeads;

    Tensor a = layernorm_rows(x, L.ln1_g, L.ln1_b);
    Tensor q = linear_nobias(a, L.wq);
    Tensor k = linear_nobias(a, L.wk);
    Tensor v = linear_nobias(a, L.wv);
    Tensor ctx({n, kDim});
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int hd = 0; hd < kHeads; ++hd) {
        Tensor scores({n, n});
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
                double acc = 0;
                for (std::int64_t d = 0; d < dh; ++d) {
                    acc += q[i * kDim + hd * dh + d] * k[j * kDim + hd * dh + d];
                }
                scores[i * n + j] = acc * inv_scale;
            }
        }
        softmax_rows(scores);
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t d = 0; d < dh; ++d) {
                double acc = 0;
                for (std::int64_t j = 0; j < n; ++j) {
                    acc += scores[i * n + j] * v[j * kDim + hd * dh + d];
                }
                ctx[i * kDim + hd * dh + d] = acc;
            }
        }
    }
    Tensor h = add(x, linear_nobias(ctx, L.wo));

    Tensor f = layernorm_rows(h, L.ln2_g, L.ln2_b);
    Tensor f1 = linear_nobias(f, L.ff_w1);
    for (std::int64_t i = 0; i < f1.numel(); ++i) f1[i] += L.ff_b1[i % (4 * kDim)];
    Tensor f2 = linear_nobias(gelu_plain(f1), L.ff_w2);
    for (std::int64_t i = 0; i < f2.numel(); ++i) f2[i] += L.ff_b2[i % kDim];
    return add(h, f2);
}

ConditionEmbedding TextEncoder::encode_tokens(const std::vector<std::string>& tokens) const {
    if (static_cast<int>(tokens.size()) > kMaxTokens) {
        throw ValidationError("text encoder: prompt has " + std::to_string(tokens.size()) +
                              " tokens, max is " + std::to_string(kMaxTokens));
    }
    Tensor x({kMaxTokens, kDim});
    for (int i = 0; i < kMaxTokens; ++i) {
        const double* src = i < static_cast<int>(tokens.size())
                                ? vocab_.data() + word_bucket(tokens[static_cast<std::size_t>(i)]) * kDim
                                : pad_.data();
        for (int j = 0; j < kDim; ++j) {
            x[i * kDim + j] = src[j] + positional_[i * kDim + j];
        }
    }
    for (int l = 0; l < kLayers; ++l) x = encoder_layer(x, l);
    ConditionEmbedding out;
    out.token_embeddings = std::move(x);
    return out;
}

ConditionEmbedding TextEncoder::encode(const std::string& prompt) const {
    return encode_tokens(tokenize(prompt));
}

ConditionEmbedding TextEncoder::encode_empty() const { return encode_tokens({}); }

}  // namespace vmt
