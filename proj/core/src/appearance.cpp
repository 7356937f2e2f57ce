#include "vmt/appearance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vmt/errors.hpp"
#include "vmt/text_encoder.hpp"
#include "vmt/video.hpp"

namespace vmt {

namespace {

struct PaletteEntry {
    const char* name;
    double r, g, b;
};

// 8-bit-exact anchor colors shared by the synthetic generator and the toy
// providers.
const PaletteEntry kPalette[8] = {
    {"red", 230 / 255.0, 30 / 255.0, 30 / 255.0},
    {"green", 30 / 255.0, 200 / 255.0, 30 / 255.0},
    {"blue", 30 / 255.0, 60 / 255.0, 230 / 255.0},
    {"yellow", 230 / 255.0, 220 / 255.0, 30 / 255.0},
    {"cyan", 30 / 255.0, 200 / 255.0, 200 / 255.0},
    {"magenta", 200 / 255.0, 30 / 255.0, 200 / 255.0},
    {"white", 245 / 255.0, 245 / 255.0, 245 / 255.0},
    {"black", 15 / 255.0, 15 / 255.0, 15 / 255.0},
};

int nearest_palette(double r, double g, double b) {
    int best = 0;
    double best_d = 1e30;
    for (int i = 0; i < 8; ++i) {
        const double d = (r - kPalette[i].r) * (r - kPalette[i].r) +
                         (g - kPalette[i].g) * (g - kPalette[i].g) +
                         (b - kPalette[i].b) * (b - kPalette[i].b);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

struct FrameStats {
    double bg[3] = {0, 0, 0};
    double fg[3] = {0, 0, 0};
    double centroid_x = 0.5, centroid_y = 0.5;
    double area = 0;       // foreground fraction
    double luminance = 0;  // whole-frame mean
    bool has_foreground = false;
    double fill_ratio = 0;  // foreground area / bounding box area
};

FrameStats analyze_frame(const Tensor& frame) {
    if (frame.rank() != 3 || frame.dim(2) != 3) {
        throw ShapeError("analyze_frame: frame must be [H,W,3]");
    }
    const std::int64_t H = frame.dim(0), W = frame.dim(1);
    FrameStats st;
    // Background: mean of the one-pixel border ring.
    double cnt = 0;
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
            const double* p = frame.data() + (y * W + x) * 3;
            st.luminance += (p[0] + p[1] + p[2]) / 3.0;
            if (y == 0 || y == H - 1 || x == 0 || x == W - 1) {
                st.bg[0] += p[0];
                st.bg[1] += p[1];
                st.bg[2] += p[2];
                cnt += 1;
            }
        }
    }
    st.luminance /= static_cast<double>(H * W);
    for (double& c : st.bg) c /= cnt;

    double mass = 0, mx = 0, my = 0;
    std::int64_t min_x = W, max_x = -1, min_y = H, max_y = -1;
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
            const double* p = frame.data() + (y * W + x) * 3;
            const double dist =
                std::fabs(p[0] - st.bg[0]) + std::fabs(p[1] - st.bg[1]) + std::fabs(p[2] - st.bg[2]);
            if (dist > 0.3) {
                const double wgt = std::min(1.0, dist);
                mass += wgt;
                mx += wgt * static_cast<double>(x);
                my += wgt * static_cast<double>(y);
                st.fg[0] += wgt * p[0];
                st.fg[1] += wgt * p[1];
                st.fg[2] += wgt * p[2];
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }
        }
    }
    if (mass > 0) {
        st.has_foreground = true;
        st.centroid_x = mx / mass / static_cast<double>(W - 1);
        st.centroid_y = my / mass / static_cast<double>(H - 1);
        for (double& c : st.fg) c /= mass;
        st.area = mass / static_cast<double>(H * W);
        const double bbox =
            static_cast<double>((max_x - min_x + 1) * (max_y - min_y + 1));
        st.fill_ratio = mass / bbox;
    }
    return st;
}

const char* kShapeWords[3] = {"square", "triangle", "disk"};
const char* kMotionWords[4] = {"circling", "bouncing", "sweeping", "lifting"};

}  // namespace

int nearest_palette_index(double r, double g, double b) { return nearest_palette(r, g, b); }

const char* palette_name(int index) { return kPalette[index].name; }

std::array<double, 3> palette_rgb(int index) {
    return {kPalette[index].r, kPalette[index].g, kPalette[index].b};
}

std::optional<int> palette_index_by_name(const std::string& name) {
    for (int i = 0; i < 8; ++i) {
        if (name == kPalette[i].name) return i;
    }
    return std::nullopt;
}

Tensor ToyClipProvider::embed_image(const Tensor& frame) const {
    FrameStats st = analyze_frame(frame);
    Tensor e({kDim});
    if (st.has_foreground) {
        e[nearest_palette(st.fg[0], st.fg[1], st.fg[2])] += 1.0;
        e[nearest_palette(st.bg[0], st.bg[1], st.bg[2])] += 0.5;
        // Shape slot from bounding-box fill ratio: a square fills its box, a
        // disk ~pi/4 of it, a triangle ~half.
        int shape = st.fill_ratio >= 0.88 ? 0 : (st.fill_ratio >= 0.62 ? 2 : 1);
        e[8 + shape] = 1.0;
        e[15] = st.centroid_x;
        e[16] = st.centroid_y;
        e[17] = st.area * 4.0;
    } else {
        e[nearest_palette(st.bg[0], st.bg[1], st.bg[2])] += 0.5;
    }
    e[18] = st.luminance;
    e[19] = 0.5;
    return l2_normalized(e);
}

Tensor ToyClipProvider::embed_text(const std::string& text) const {
    Tensor e({kDim});
    for (const auto& tok : TextEncoder::tokenize(text)) {
        for (int i = 0; i < 8; ++i) {
            if (tok == kPalette[i].name) e[i] += 1.0;
        }
        for (int i = 0; i < 3; ++i) {
            if (tok == kShapeWords[i]) e[8 + i] += 1.0;
        }
        for (int i = 0; i < 4; ++i) {
            if (tok == kMotionWords[i]) e[11 + i] += 1.0;
        }
    }
    e[19] = 0.5;
    return l2_normalized(e);
}

ProviderRegistry::ProviderRegistry() {
    factories_["toy-clip"] = [] { return std::make_shared<ToyClipProvider>(); };
}

ProviderRegistry& ProviderRegistry::instance() {
    static ProviderRegistry reg;
    return reg;
}

void ProviderRegistry::register_provider(
    const std::string& name, std::function<std::shared_ptr<EmbeddingProvider>()> factory) {
    factories_[name] = std::move(factory);
}

std::shared_ptr<EmbeddingProvider> ProviderRegistry::create(const std::string& name) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) {
        throw ValidationError("unknown embedding provider: " + name);
    }
    return it->second();
}

std::vector<std::string> ProviderRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : factories_) {
        (void)v;
        out.push_back(k);
    }
    return out;
}

FrameEmbedding embed_frame(const Tensor& frame, const EmbeddingProvider& provider,
                           int source_frame_index) {
    Tensor e = provider.embed_image(frame);
    if (e.numel() != provider.dim()) {
        throw ValidationError("provider " + provider.name() + " returned dim " +
                              std::to_string(e.numel()) + ", expected " +
                              std::to_string(provider.dim()));
    }
    return FrameEmbedding{l2_normalized(e), source_frame_index};
}

const char* const kRecaptionInstruction =
    "Expand the given caption with concrete appearance details visible in the image: "
    "subject colors, background, and lighting. Keep every word of the original caption, "
    "including the subject and the action verb, and reply with a single sentence.";

std::string MockRecaptioner::describe(const std::string& base_prompt, const Tensor& frame) {
    FrameStats st = analyze_frame(frame);
    if (!st.has_foreground) return base_prompt;
    const char* fg = kPalette[nearest_palette(st.fg[0], st.fg[1], st.fg[2])].name;
    const char* bg = kPalette[nearest_palette(st.bg[0], st.bg[1], st.bg[2])].name;
    const char* tone = st.luminance >= 0.5 ? "bright" : "dim";
    std::ostringstream os;
    os << base_prompt << ", a " << fg << " subject over a " << bg << " background, " << tone
       << " scene";
    return os.str();
}

std::string MockRecaptioner::recaption(const std::string& instruction,
                                       const std::string& base_prompt, const Tensor& frame) {
    (void)instruction;
    return describe(base_prompt, frame);
}

namespace {

std::string base64_encode(const std::string& bytes) {
    static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 2 < bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                           static_cast<unsigned char>(bytes[i + 2]);
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back(table[v & 63]);
        i += 3;
    }
    if (i + 1 == bytes.size()) {
        const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::string frame_to_ppm_bytes(const Tensor& frame) {
    std::ostringstream os;
    os << "P6\n" << frame.dim(1) << " " << frame.dim(0) << "\n255\n";
    for (std::int64_t i = 0; i < frame.numel(); ++i) {
        const double c = std::clamp(frame[i], 0.0, 1.0);
        os.put(static_cast<char>(std::lround(c * 255.0)));
    }
    return os.str();
}

}  // namespace

HttpRecaptioner::HttpRecaptioner(std::string host, int port, std::string path, int max_retries,
                                 int timeout_seconds)
    : host_(std::move(host)),
      port_(port),
      path_(std::move(path)),
      max_retries_(max_retries),
      timeout_seconds_(timeout_seconds) {}

std::string HttpRecaptioner::recaption(const std::string& instruction,
                                       const std::string& base_prompt, const Tensor& frame) {
    nlohmann::json req = {
        {"instruction", instruction},
        {"prompt", base_prompt},
        {"image", base64_encode(frame_to_ppm_bytes(frame))},
    };
    const std::string body = req.dump();
    std::string last_error;
    for (int attempt = 0; attempt <= max_retries_; ++attempt) {
        httplib::Client client(host_, port_);
        client.set_connection_timeout(timeout_seconds_);
        client.set_read_timeout(timeout_seconds_);
        auto res = client.Post(path_.c_str(), body, "application/json");
        if (res && res->status == 200) {
            auto parsed = nlohmann::json::parse(res->body, nullptr, false);
            if (parsed.is_discarded() || !parsed.contains("text")) {
                throw ClientError("recaptioner returned malformed response", attempt);
            }
            return parsed["text"].get<std::string>();
        }
        last_error = res ? "http status " + std::to_string(res->status)
                         : "connection or timeout failure";
        if (attempt < max_retries_) {
            std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
        }
    }
    throw ClientError("recaptioner unreachable: " + last_error, max_retries_);
}

PromptSpec recaption(const PromptSpec& base, const Tensor& frame, RecaptionClient& client,
                     std::vector<std::string>* log) {
    PromptSpec out = base;
    const std::string expanded = client.recaption(kRecaptionInstruction, base.base_prompt, frame);

    const auto base_tokens = TextEncoder::tokenize(base.base_prompt);
    const auto new_tokens = TextEncoder::tokenize(expanded);
    auto contains_all = [&] {
        std::multiset<std::string> pool(new_tokens.begin(), new_tokens.end());
        for (const auto& t : base_tokens) {
            auto it = pool.find(t);
            if (it == pool.end()) return false;
            pool.erase(it);
        }
        return true;
    };
    std::string reason;
    if (static_cast<int>(new_tokens.size()) > TextEncoder::kMaxTokens) {
        reason = "recaption exceeds token limit";
    } else if (!contains_all()) {
        reason = "recaption dropped base tokens";
    } else if (base.verb_index &&
               (*base.verb_index >= static_cast<int>(base_tokens.size()) ||
                std::find(new_tokens.begin(), new_tokens.end(),
                          base_tokens[static_cast<std::size_t>(*base.verb_index)]) ==
                    new_tokens.end())) {
        reason = "recaption dropped the verb";
    }
    if (!reason.empty()) {
        if (log) log->push_back(reason + "; falling back to base prompt: " + expanded);
        out.recaptioned_prompt = base.base_prompt;
        return out;
    }
    out.recaptioned_prompt = expanded;
    return out;
}

InjectorWeights InjectorWeights::zero_init(const Backbone& model, int d_img) {
    InjectorWeights w;
    w.d_img = d_img;
    for (const auto& prefix : model.temporal_block_prefixes()) {
        w.w_p[prefix] = Tensor::zeros({model.block_width(prefix), d_img});
    }
    return w;
}

InjectionVars InjectorWeights::bind(Graph& g, const Tensor& embedding, bool trainable) const {
    if (embedding.numel() != d_img) {
        throw ShapeError("injection: embedding dim " + std::to_string(embedding.numel()) +
                         " != injector d_img " + std::to_string(d_img));
    }
    InjectionVars vars;
    vars.embedding = g.constant(embedding);
    for (const auto& [prefix, w] : w_p) vars.w_p[prefix] = g.leaf(w, trainable);
    return vars;
}

Tensor inject_appearance(const Tensor& h_s, const FrameEmbedding& emb, const InjectorWeights& w,
                         const std::string& block_prefix) {
    auto it = w.w_p.find(block_prefix);
    if (it == w.w_p.end()) {
        throw ValidationError("inject_appearance: no projection for block " + block_prefix);
    }
    if (h_s.rank() != 3) throw ShapeError("inject_appearance: expected [s, f, c] hidden states");
    const Tensor& wp = it->second;
    if (emb.vector.numel() != wp.dim(1) || h_s.dim(2) != wp.dim(0)) {
        throw ShapeError("inject_appearance: dimension mismatch");
    }
    Tensor u = linear_nobias(emb.vector.reshaped({1, wp.dim(1)}), wp);
    Tensor out = h_s;
    const std::int64_t c = h_s.dim(2);
    const std::int64_t rows = h_s.numel() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < c; ++j) out[r * c + j] += u[j];
    }
    return out;
}

}  // namespace vmt
