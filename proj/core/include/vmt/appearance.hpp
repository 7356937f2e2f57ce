#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vmt/backbone.hpp"
#include "vmt/tensor.hpp"

namespace vmt {

/// Base prompt plus optional recaptioned expansion. verb_index refers to the
/// base prompt's word tokenization.
struct PromptSpec {
    std::string base_prompt;
    std::optional<std::string> recaptioned_prompt;
    std::optional<int> verb_index;

    const std::string& effective_prompt() const {
        return recaptioned_prompt ? *recaptioned_prompt : base_prompt;
    }
};

/// Image embedding of one video frame.
struct FrameEmbedding {
    Tensor vector;  // [d_img]
    int source_frame_index = -1;
};

/// Shared text/image embedding space. Image and text embeddings are unit-norm
/// vectors of dim(); cosine between them drives the CLIP-style metrics, and
/// the image side doubles as the appearance prior for injection.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    virtual Tensor embed_image(const Tensor& frame) const = 0;  // [H,W,3] -> [dim]
    virtual Tensor embed_text(const std::string& text) const = 0;
};

// Fixed 8-entry color palette shared by the synthetic generator, the mock
// recaptioner and the toy provider. Values are 8-bit exact so PPM round trips
// preserve them.
int nearest_palette_index(double r, double g, double b);
const char* palette_name(int index);
std::array<double, 3> palette_rgb(int index);
std::optional<int> palette_index_by_name(const std::string& name);

/// Deterministic desk-scale provider. The shared space has named slots:
///   [0..7]   palette colors (red, green, blue, yellow, cyan, magenta, white, black)
///   [8..10]  shapes (square, triangle, disk)
///   [11..14] motions (circling, bouncing, sweeping, lifting)
///   [15..17] image-only frame stats (centroid x, centroid y, foreground area)
///   [18]     mean luminance
///   [19]     shared bias
/// Images fill color/shape/stat slots from frame analysis; texts fill
/// color/shape/motion slots from keyword matches. Output is L2-normalized.
class ToyClipProvider : public EmbeddingProvider {
public:
    static constexpr int kDim = 20;

    std::string name() const override { return "toy-clip"; }
    int dim() const override { return kDim; }
    Tensor embed_image(const Tensor& frame) const override;
    Tensor embed_text(const std::string& text) const override;
};

/// Registry keyed by provider name; "toy-clip" is always available and tests
/// may register stand-ins for external encoders.
class ProviderRegistry {
public:
    static ProviderRegistry& instance();
    void register_provider(const std::string& name,
                           std::function<std::shared_ptr<EmbeddingProvider>()> factory);
    std::shared_ptr<EmbeddingProvider> create(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    ProviderRegistry();
    std::map<std::string, std::function<std::shared_ptr<EmbeddingProvider>()>> factories_;
};

/// Embeds one frame with the active provider; the result is unit-norm.
FrameEmbedding embed_frame(const Tensor& frame, const EmbeddingProvider& provider,
                           int source_frame_index = -1);

/// Instruction sent to the recaptioner; stored here so every client (and the
/// mock) uses the same task description.
extern const char* const kRecaptionInstruction;

/// Client interface for the prompt recaptioner.
class RecaptionClient {
public:
    virtual ~RecaptionClient() = default;
    virtual std::string name() const = 0;
    /// Returns the expanded prompt. Throws ClientError on failure.
    virtual std::string recaption(const std::string& instruction, const std::string& base_prompt,
                                  const Tensor& frame) = 0;
};

/// Offline deterministic recaptioner. Output is a pure function of the frame's
/// color statistics:
///   "<base>, a <fg-color> subject over a <bg-color> background, <tone> scene"
/// where bg-color names the dominant border color, fg-color the mean color of
/// pixels far from it, and tone is "bright" (mean luminance >= 0.5) or "dim".
/// A frame with no foreground pixels yields no descriptors and the base prompt
/// is returned unchanged.
class MockRecaptioner : public RecaptionClient {
public:
    std::string name() const override { return "mock"; }
    std::string recaption(const std::string& instruction, const std::string& base_prompt,
                          const Tensor& frame) override;

    /// The documented pure function; exposed so tests can derive expectations.
    static std::string describe(const std::string& base_prompt, const Tensor& frame);
};

/// JSON-over-HTTP client: POST {instruction, prompt, image} -> {text}.
/// The image is sent as a base64 PPM. Retries transient failures.
class HttpRecaptioner : public RecaptionClient {
public:
    HttpRecaptioner(std::string host, int port, std::string path = "/recaption",
                    int max_retries = 2, int timeout_seconds = 10);
    std::string name() const override { return "http"; }
    std::string recaption(const std::string& instruction, const std::string& base_prompt,
                          const Tensor& frame) override;

private:
    std::string host_;
    int port_;
    std::string path_;
    int max_retries_;
    int timeout_seconds_;
};

/// Expands the base prompt with appearance detail from one frame. The result
/// must keep every base token (subject and verb) and fit the text encoder;
/// otherwise the base prompt is kept and a note is appended to `log`.
PromptSpec recaption(const PromptSpec& base, const Tensor& frame, RecaptionClient& client,
                     std::vector<std::string>* log = nullptr);

/// Per-block linear maps from the image-embedding space into each temporal
/// transformer's channel width. Zero-initialized so injection starts as a
/// no-op.
struct InjectorWeights {
    int d_img = 0;
    std::map<std::string, Tensor> w_p;  // temporal block prefix -> [C, d_img]

    static InjectorWeights zero_init(const Backbone& model, int d_img);
    InjectionVars bind(Graph& g, const Tensor& embedding, bool trainable) const;
};

/// h_t = h_s + broadcast(W_p^l emb): plain-tensor form of the in-graph
/// injection, for direct use and tests. h_s is temporal layout [s, f, c].
Tensor inject_appearance(const Tensor& h_s, const FrameEmbedding& emb, const InjectorWeights& w,
                         const std::string& block_prefix);

}  // namespace vmt
