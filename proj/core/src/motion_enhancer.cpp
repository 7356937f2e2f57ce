#include "vmt/motion_enhancer.hpp"

#include <cmath>
#include <set>

#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

namespace {

const std::set<std::string>& auxiliaries() {
    static const std::set<std::string> aux = {"is", "are", "was", "were", "am", "be", "been",
                                              "being"};
    return aux;
}

const std::set<std::string>& verb_lexicon() {
    static const std::set<std::string> lex = {
        "circling",  "bouncing", "sweeping",      "lifting",  "drifting", "spinning",
        "skateboarding", "waving",  "clapping",  "bowing",   "drinking", "kicking",
        "pointing",  "wiping",   "riding",        "swinging", "jumping",  "running",
        "dancing",   "rolling",
    };
    return lex;
}

bool ends_with_ing(const std::string& t) {
    return t.size() > 4 && t.compare(t.size() - 3, 3, "ing") == 0;
}

}  // namespace

std::optional<int> RuleBasedTagger::locate(const std::vector<std::string>& tokens) const {
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (ends_with_ing(tokens[i]) && auxiliaries().count(tokens[i - 1])) {
            return static_cast<int>(i);
        }
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (verb_lexicon().count(tokens[i])) return static_cast<int>(i);
    }
    int sole = -1;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (ends_with_ing(tokens[i])) {
            if (sole >= 0) return std::nullopt;  // ambiguous
            sole = static_cast<int>(i);
        }
    }
    if (sole >= 0) return sole;
    return std::nullopt;
}

int locate_verb(const std::vector<std::string>& tokens, const VerbTagger& tagger) {
    if (tokens.empty()) throw ValidationError("locate_verb: empty token sequence");
    auto idx = tagger.locate(tokens);
    if (!idx) {
        throw ValidationError(
            "locate_verb: no motion verb found; supply an explicit verb index");
    }
    return *idx;
}

int locate_verb(const std::string& prompt, const VerbTagger& tagger) {
    return locate_verb(TextEncoder::tokenize(prompt), tagger);
}

Tensor pool_video_embedding(const std::vector<FrameEmbedding>& frame_embeddings) {
    if (frame_embeddings.empty()) {
        throw ValidationError("pool_video_embedding: empty embedding list");
    }
    const std::int64_t d = frame_embeddings[0].vector.numel();
    Tensor out({d});
    for (const auto& fe : frame_embeddings) {
        if (fe.vector.numel() != d) {
            throw ShapeError("pool_video_embedding: mixed embedding dims");
        }
        out.add_scaled(fe.vector, 1.0);
    }
    return scale(out, 1.0 / static_cast<double>(frame_embeddings.size()));
}

EnhancerMlp EnhancerMlp::init(std::uint64_t seed, int d_img, int d_text, int d_hidden) {
    if (d_hidden <= 0) d_hidden = d_text;
    EnhancerMlp mlp;
    mlp.w1 = Rng(seed).fork("enhancer.w1").normal_tensor({d_hidden, d_img + d_text}, 0.02);
    mlp.w2 = Tensor::zeros({d_text, d_hidden});
    return mlp;
}

EnhancerMlp::Bound EnhancerMlp::bind(Graph& g, bool trainable) const {
    return Bound{g.leaf(w1, trainable), g.leaf(w2, trainable)};
}

Tensor compute_residual(const Tensor& pooled, const Tensor& e_b, const EnhancerMlp& mlp) {
    if (pooled.numel() + e_b.numel() != mlp.d_input()) {
        throw ShapeError("compute_residual: input dims do not match MLP");
    }
    Tensor cat({1, mlp.d_input()});
    for (std::int64_t i = 0; i < pooled.numel(); ++i) cat[i] = pooled[i];
    for (std::int64_t i = 0; i < e_b.numel(); ++i) cat[pooled.numel() + i] = e_b[i];
    Tensor h = linear_nobias(cat, mlp.w1);
    for (std::int64_t i = 0; i < h.numel(); ++i) {
        h[i] = h[i] * 0.5 * (1.0 + std::erf(h[i] * 0.7071067811865475244));
    }
    return linear_nobias(h, mlp.w2).reshaped({mlp.d_text()});
}

Var compute_residual(Graph& g, Var pooled, Var e_b, const EnhancerMlp::Bound& mlp) {
    const std::int64_t dp = pooled.value().numel();
    const std::int64_t db = e_b.value().numel();
    Var cat = g.concat_last(g.reshape(pooled, {1, dp}), g.reshape(e_b, {1, db}));
    Var h = g.gelu(g.linear(cat, mlp.w1));
    return g.reshape(g.linear(h, mlp.w2), {mlp.w2.value().dim(0)});
}

ConditionEmbedding enhance_condition(const ConditionEmbedding& cond, const Tensor& e_r) {
    if (!cond.verb_index) {
        throw ValidationError("enhance_condition: condition has no verb index");
    }
    if (cond.enhanced) {
        throw ValidationError("enhance_condition: condition already enhanced");
    }
    if (e_r.numel() != cond.dim()) {
        throw ShapeError("enhance_condition: residual dim mismatch");
    }
    ConditionEmbedding out = cond;
    const std::int64_t c = cond.dim();
    double* rowp = out.token_embeddings.data() + *cond.verb_index * c;
    for (std::int64_t j = 0; j < c; ++j) rowp[j] += e_r[j];
    out.enhanced = true;
    return out;
}

Var enhance_condition(Graph& g, Var cond_tokens, int verb_index, Var e_r) {
    Var base_row = g.row(cond_tokens, verb_index);
    return g.set_row(cond_tokens, verb_index, g.add(base_row, e_r));
}

double reg_loss(const Tensor& e_r) { return e_r.sum_sq(); }

Var reg_loss(Graph& g, Var e_r) { return g.sum_sq(e_r); }

}  // namespace vmt
