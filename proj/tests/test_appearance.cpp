#include <gtest/gtest.h>

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vmt/appearance.hpp"
#include "vmt/backbone.hpp"
#include "vmt/data.hpp"
#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

using namespace vmt;

namespace {

const Backbone& desk_model() {
    static Backbone model = Backbone::seeded(17);
    return model;
}

// Frame with a centered colored block over a background color.
Tensor block_frame(std::array<double, 3> fg, std::array<double, 3> bg, int size = 32,
                   int half = 6) {
    Tensor frame({size, size, 3});
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const bool inside = std::abs(y - size / 2) <= half && std::abs(x - size / 2) <= half;
            const auto& c = inside ? fg : bg;
            for (int k = 0; k < 3; ++k) frame.at({y, x, k}) = c[static_cast<std::size_t>(k)];
        }
    }
    return frame;
}

}  // namespace

TEST(Recaption, MockFollowsDocumentedRule) {
    MockRecaptioner mock;
    // red block on white, bright frame -> descriptors derived from stats
    Tensor frame = block_frame(palette_rgb(0), palette_rgb(6));
    PromptSpec base;
    base.base_prompt = "a man is skateboarding";
    base.verb_index = 2;
    PromptSpec out = recaption(base, frame, mock);
    EXPECT_EQ(*out.recaptioned_prompt,
              "a man is skateboarding, a red subject over a white background, bright scene");
    // same stats -> same string (pure function of frame statistics)
    PromptSpec again = recaption(base, frame, mock);
    EXPECT_EQ(*out.recaptioned_prompt, *again.recaptioned_prompt);
}

TEST(Recaption, UniformFrameFallsBackToBase) {
    MockRecaptioner mock;
    Tensor frame = Tensor::full({32, 32, 3}, 0.9);  // no foreground at all
    PromptSpec base;
    base.base_prompt = "a man is skateboarding";
    PromptSpec out = recaption(base, frame, mock);
    EXPECT_EQ(*out.recaptioned_prompt, base.base_prompt);
}

TEST(Recaption, KeepsSubjectAndVerbVerbatim) {
    MockRecaptioner mock;
    Tensor frame = block_frame(palette_rgb(2), palette_rgb(7));
    PromptSpec base;
    base.base_prompt = "a blue square is circling on a black background";
    base.verb_index = 4;
    PromptSpec out = recaption(base, frame, mock);
    const auto base_tokens = TextEncoder::tokenize(base.base_prompt);
    const auto out_tokens = TextEncoder::tokenize(*out.recaptioned_prompt);
    for (const auto& t : base_tokens) {
        EXPECT_NE(std::find(out_tokens.begin(), out_tokens.end(), t), out_tokens.end())
            << "dropped base token " << t;
    }
    EXPECT_NE(std::find(out_tokens.begin(), out_tokens.end(), "circling"), out_tokens.end());
}

namespace {

class VerbDroppingClient : public RecaptionClient {
public:
    std::string name() const override { return "verb-dropper"; }
    std::string recaption(const std::string&, const std::string&, const Tensor&) override {
        return "a man with a hat";  // drops the verb and most base tokens
    }
};

class OverlongClient : public RecaptionClient {
public:
    std::string name() const override { return "overlong"; }
    std::string recaption(const std::string&, const std::string& base, const Tensor&) override {
        std::string out = base;
        for (int i = 0; i < 30; ++i) out += " word" + std::to_string(i);
        return out;
    }
};

}  // namespace

TEST(Recaption, ValidationFailuresFallBackAndLog) {
    Tensor frame = block_frame(palette_rgb(1), palette_rgb(6));
    PromptSpec base;
    base.base_prompt = "a man is skateboarding";
    base.verb_index = 2;

    VerbDroppingClient dropper;
    std::vector<std::string> log;
    PromptSpec out = recaption(base, frame, dropper, &log);
    EXPECT_EQ(*out.recaptioned_prompt, base.base_prompt);
    ASSERT_EQ(log.size(), 1u);
    EXPECT_NE(log[0].find("dropped"), std::string::npos);

    OverlongClient overlong;
    log.clear();
    out = recaption(base, frame, overlong, &log);
    EXPECT_EQ(*out.recaptioned_prompt, base.base_prompt);
    ASSERT_EQ(log.size(), 1u);
    EXPECT_NE(log[0].find("token limit"), std::string::npos);
}

TEST(Recaption, HttpClientRoundTripAndRetryError) {
    httplib::Server server;
    server.Post("/recaption", [](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        EXPECT_TRUE(body.contains("instruction"));
        EXPECT_TRUE(body.contains("image"));
        nlohmann::json out = {
            {"text", body["prompt"].get<std::string>() + ", wearing a bright jacket"}};
        res.set_content(out.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpRecaptioner client("127.0.0.1", port);
    Tensor frame = block_frame(palette_rgb(0), palette_rgb(6));
    const std::string text =
        client.recaption(kRecaptionInstruction, "a man is skateboarding", frame);
    EXPECT_EQ(text, "a man is skateboarding, wearing a bright jacket");

    server.stop();
    server_thread.join();

    HttpRecaptioner dead("127.0.0.1", 1, "/recaption", /*max_retries=*/1,
                         /*timeout_seconds=*/1);
    try {
        dead.recaption(kRecaptionInstruction, "a man is skateboarding", frame);
        FAIL() << "expected ClientError";
    } catch (const ClientError& e) {
        EXPECT_EQ(e.retries(), 1);
    }
}

TEST(Provider, ToyClipDeterministicUnitNorm) {
    ToyClipProvider provider;
    Tensor frame = block_frame(palette_rgb(0), palette_rgb(6));
    FrameEmbedding a = embed_frame(frame, provider, 0);
    FrameEmbedding b = embed_frame(frame, provider, 0);
    for (std::int64_t i = 0; i < a.vector.numel(); ++i) {
        EXPECT_DOUBLE_EQ(a.vector[i], b.vector[i]);
    }
    EXPECT_NEAR(a.vector.l2_norm(), 1.0, 1e-6);
    EXPECT_NEAR(provider.embed_text("a red square is circling").l2_norm(), 1.0, 1e-6);
}

TEST(Provider, ToyClipAlignsMatchingColorAndShape) {
    ToyClipProvider provider;
    SynthSpec red_square;  // defaults: red square on white
    VideoClip clip = synth_motion_video(red_square, 4, 32, 32);
    Tensor img = provider.embed_image(clip.frame(0));
    const double match = dot(img, provider.embed_text("a red square"));
    const double mismatch = dot(img, provider.embed_text("a blue disk"));
    EXPECT_GT(match, mismatch + 0.2);
}

TEST(Provider, RegistryReportsPluggedDimension) {
    // A stand-in for an external 1024-d encoder: the pipeline must take the
    // dimension from the provider at runtime instead of hardcoding it.
    class WideProvider : public EmbeddingProvider {
    public:
        std::string name() const override { return "wide-stub"; }
        int dim() const override { return 1024; }
        Tensor embed_image(const Tensor&) const override {
            Tensor e({1024});
            e[3] = 1.0;
            return e;
        }
        Tensor embed_text(const std::string&) const override {
            Tensor e({1024});
            e[3] = 1.0;
            return e;
        }
    };
    ProviderRegistry::instance().register_provider(
        "wide-stub", [] { return std::make_shared<WideProvider>(); });
    auto provider = ProviderRegistry::instance().create("wide-stub");
    EXPECT_EQ(provider->dim(), 1024);
    InjectorWeights w = InjectorWeights::zero_init(desk_model(), provider->dim());
    for (const auto& [prefix, wp] : w.w_p) {
        (void)prefix;
        EXPECT_EQ(wp.dim(1), 1024);
    }
    EXPECT_THROW(ProviderRegistry::instance().create("no-such-provider"), ValidationError);
}

TEST(Injection, ZeroWeightAndZeroEmbeddingAreNoOps) {
    const Backbone& model = desk_model();
    Rng rng(3);
    InjectorWeights w = InjectorWeights::zero_init(model, 20);
    Tensor h = rng.normal_tensor({64, 8, 64});  // [s, f, c] temporal layout
    FrameEmbedding emb{rng.normal_tensor({20}), 0};
    Tensor out = inject_appearance(h, emb, w, "down.0.temporal");
    for (std::int64_t i = 0; i < h.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], h[i]);

    // nonzero weights, zero embedding
    for (auto& [prefix, wp] : w.w_p) {
        (void)prefix;
        wp = rng.normal_tensor(wp.shape());
    }
    FrameEmbedding zero{Tensor::zeros({20}), 0};
    out = inject_appearance(h, zero, w, "down.0.temporal");
    for (std::int64_t i = 0; i < h.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], h[i]);
}

TEST(Injection, HandComputedTwoDimExample) {
    // c = 2, d_img = 2, W_p = I, emb = [1, -1], h_s = 0: every position
    // becomes [1, -1].
    InjectorWeights w;
    w.d_img = 2;
    w.w_p["blk"] = Tensor({2, 2}, {1, 0, 0, 1});
    Tensor h = Tensor::zeros({3, 4, 2});
    FrameEmbedding emb{Tensor({2}, {1, -1}), 0};
    Tensor out = inject_appearance(h, emb, w, "blk");
    for (std::int64_t s = 0; s < 3; ++s) {
        for (std::int64_t f = 0; f < 4; ++f) {
            EXPECT_DOUBLE_EQ(out.at({s, f, 0}), 1.0);
            EXPECT_DOUBLE_EQ(out.at({s, f, 1}), -1.0);
        }
    }
}

TEST(Injection, InjectedTermIsFrameConstantWithZeroVariance) {
    const Backbone& model = desk_model();
    Rng rng(4);
    InjectorWeights w = InjectorWeights::zero_init(model, 20);
    for (auto& [prefix, wp] : w.w_p) {
        (void)prefix;
        wp = rng.normal_tensor(wp.shape());
    }
    FrameEmbedding emb{l2_normalized(rng.normal_tensor({20})), 2};

    // Injecting into zero hidden states exposes the raw injected term; its
    // variance along the frame axis must be exactly zero.
    Tensor term = inject_appearance(Tensor::zeros({64, 8, 128}), emb, w, "mid.temporal");
    for (std::int64_t s = 0; s < 64; ++s) {
        for (std::int64_t c = 0; c < 128; ++c) {
            const double first = term.at({s, 0, c});
            double var = 0;
            for (std::int64_t f = 0; f < 8; ++f) {
                var += (term.at({s, f, c}) - first) * (term.at({s, f, c}) - first);
            }
            ASSERT_EQ(var, 0.0);
        }
    }

    // On arbitrary hidden states: out = h + broadcast(term), with the same
    // per-channel value added to every position and frame.
    Tensor h = rng.normal_tensor({64, 8, 128});
    Tensor out = inject_appearance(h, emb, w, "mid.temporal");
    EXPECT_EQ(out.shape(), h.shape());
    for (std::int64_t s = 0; s < 64; ++s) {
        for (std::int64_t f = 0; f < 8; ++f) {
            for (std::int64_t c = 0; c < 128; ++c) {
                ASSERT_EQ(out.at({s, f, c}), h.at({s, f, c}) + term.at({0, 0, c}));
            }
        }
    }
}

TEST(Injection, LinearInEmbedding) {
    const Backbone& model = desk_model();
    Rng rng(5);
    InjectorWeights w = InjectorWeights::zero_init(model, 20);
    for (auto& [prefix, wp] : w.w_p) {
        (void)prefix;
        wp = rng.normal_tensor(wp.shape());
    }
    Tensor h = Tensor::zeros({4, 2, 64});
    Tensor e1 = rng.normal_tensor({20});
    Tensor e2 = rng.normal_tensor({20});
    Tensor sum_out = inject_appearance(h, FrameEmbedding{add(e1, e2), 0}, w, "up.0.temporal");
    Tensor a = inject_appearance(h, FrameEmbedding{e1, 0}, w, "up.0.temporal");
    Tensor b = inject_appearance(h, FrameEmbedding{e2, 0}, w, "up.0.temporal");
    Tensor ab = add(a, b);
    for (std::int64_t i = 0; i < sum_out.numel(); ++i) {
        EXPECT_NEAR(sum_out[i], ab[i], 1e-12);
    }
}

TEST(Injection, MissingBlockError) {
    InjectorWeights w;
    w.d_img = 4;
    w.w_p["only"] = Tensor::zeros({8, 4});
    Tensor h = Tensor::zeros({2, 2, 8});
    FrameEmbedding emb{Tensor::zeros({4}), 0};
    EXPECT_THROW(inject_appearance(h, emb, w, "other"), ValidationError);
}
