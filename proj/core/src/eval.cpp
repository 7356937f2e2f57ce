#include "vmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

std::array<double, 2> frame_foreground_centroid(const Tensor& frame) {
    if (frame.rank() != 3 || frame.dim(2) != 3) {
        throw ShapeError("frame_foreground_centroid: frame must be [H,W,3]");
    }
    const std::int64_t H = frame.dim(0), W = frame.dim(1);
    double bg[3] = {0, 0, 0};
    double cnt = 0;
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
            if (y != 0 && y != H - 1 && x != 0 && x != W - 1) continue;
            const double* p = frame.data() + (y * W + x) * 3;
            bg[0] += p[0];
            bg[1] += p[1];
            bg[2] += p[2];
            cnt += 1;
        }
    }
    for (double& c : bg) c /= cnt;
    double mass = 0, mx = 0, my = 0;
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) {
            const double* p = frame.data() + (y * W + x) * 3;
            const double dist =
                std::fabs(p[0] - bg[0]) + std::fabs(p[1] - bg[1]) + std::fabs(p[2] - bg[2]);
            if (dist > 0.3) {
                const double wgt = std::min(1.0, dist);
                mass += wgt;
                mx += wgt * static_cast<double>(x);
                my += wgt * static_cast<double>(y);
            }
        }
    }
    if (mass <= 0) {
        return {0.5 * static_cast<double>(W - 1), 0.5 * static_cast<double>(H - 1)};
    }
    return {mx / mass, my / mass};
}

Tensor TrajectoryEmbedder::embed_clip(const VideoClip& clip) const {
    clip.validate();
    const std::int64_t f = clip.frame_count();
    Tensor hist({kDim});
    if (f < 2) {
        hist[0] = 1.0;
        return hist;
    }
    const double diag = std::hypot(static_cast<double>(clip.width()),
                                   static_cast<double>(clip.height()));
    std::array<double, 2> prev = frame_foreground_centroid(clip.frame(0));
    for (std::int64_t i = 1; i < f; ++i) {
        const std::array<double, 2> cur = frame_foreground_centroid(clip.frame(i));
        const double vx = cur[0] - prev[0];
        const double vy = cur[1] - prev[1];
        prev = cur;
        const double mag = std::hypot(vx, vy);
        if (mag < 0.02 * diag) {
            hist[0] += 1.0;
            continue;
        }
        int dir = static_cast<int>(std::floor((std::atan2(vy, vx) + M_PI) / (2.0 * M_PI) *
                                              kDirections));
        dir = std::clamp(dir, 0, kDirections - 1);
        const int band = mag < 0.05 * diag ? 0 : (mag < 0.12 * diag ? 1 : 2);
        hist[1 + dir * kMagnitudeBands + band] += 1.0;
    }
    return l2_normalized(hist);
}

double clip_t(const VideoClip& clip, const std::string& prompt,
              const EmbeddingProvider& provider) {
    clip.validate();
    const Tensor text = provider.embed_text(prompt);
    double acc = 0;
    for (std::int64_t i = 0; i < clip.frame_count(); ++i) {
        acc += cosine_similarity(provider.embed_image(clip.frame(i)), text);
    }
    return acc / static_cast<double>(clip.frame_count());
}

double clip_e(const VideoClip& clip, const std::string& entity_prompt,
              const EmbeddingProvider& provider) {
    return clip_t(clip, entity_prompt, provider);
}

double temp_cons(const VideoClip& clip, const EmbeddingProvider& provider) {
    clip.validate();
    if (clip.frame_count() < 2) {
        throw ValidationError("temp_cons: needs at least two frames");
    }
    double acc = 0;
    Tensor prev = provider.embed_image(clip.frame(0));
    for (std::int64_t i = 1; i < clip.frame_count(); ++i) {
        Tensor cur = provider.embed_image(clip.frame(i));
        acc += cosine_similarity(prev, cur);
        prev = std::move(cur);
    }
    return acc / static_cast<double>(clip.frame_count() - 1);
}

double motion_fidelity(const std::map<std::string, std::vector<VideoClip>>& generated,
                       const std::map<std::string, std::vector<VideoClip>>& references,
                       const VideoEmbedder& embedder, std::uint64_t selection_seed) {
    if (generated.empty()) throw ValidationError("motion_fidelity: no motions given");
    Rng rng = Rng(selection_seed).fork("mofid.reference");
    double motion_mean_sum = 0;
    for (const auto& [motion, gen_clips] : generated) {
        if (gen_clips.empty()) {
            throw ValidationError("motion_fidelity: empty generated set for motion " + motion);
        }
        auto rit = references.find(motion);
        if (rit == references.end() || rit->second.empty()) {
            throw ValidationError("motion_fidelity: no reference clips for motion " + motion);
        }
        const auto& refs = rit->second;
        const auto ref_idx = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(refs.size())));
        const Tensor ref_emb = embedder.embed_clip(refs[ref_idx]);
        double acc = 0;
        for (const auto& clip : gen_clips) {
            acc += cosine_similarity(ref_emb, embedder.embed_clip(clip));
        }
        motion_mean_sum += acc / static_cast<double>(gen_clips.size());
    }
    return motion_mean_sum / static_cast<double>(generated.size());
}

void EvalReport::finalize() {
    aggregate = EvalRow{};
    aggregate.motion = "aggregate";
    if (rows.empty()) return;
    for (const auto& r : rows) {
        aggregate.clip_t += r.clip_t;
        aggregate.clip_e += r.clip_e;
        aggregate.temp_cons += r.temp_cons;
        aggregate.mofid += r.mofid;
    }
    const double n = static_cast<double>(rows.size());
    aggregate.clip_t /= n;
    aggregate.clip_e /= n;
    aggregate.temp_cons /= n;
    aggregate.mofid /= n;
}

void EvalReport::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("EvalReport: cannot open " + path.string());
    os.precision(6);
    os << std::fixed;
    for (const auto& [k, v] : metadata) os << "# " << k << "=" << v << "\n";
    os << "motion\ttemplate\tclip_t\tclip_e\ttemp_cons\tmofid\n";
    for (const auto& r : rows) {
        os << r.motion << "\t" << r.template_id << "\t" << r.clip_t << "\t" << r.clip_e << "\t"
           << r.temp_cons << "\t" << r.mofid << "\n";
    }
    os << aggregate.motion << "\t-\t" << aggregate.clip_t << "\t" << aggregate.clip_e << "\t"
       << aggregate.temp_cons << "\t" << aggregate.mofid << "\n";
}

EvalReport evaluate_benchmark(const Backbone& model, const BenchmarkInputs& inputs,
                              const EmbeddingProvider& provider, const VideoEmbedder& embedder) {
    if (inputs.motions.empty()) {
        throw ValidationError("evaluate_benchmark: no motions given");
    }
    EvalReport report;
    report.metadata["provider"] = provider.name();
    report.metadata["embedder"] = embedder.name();
    report.metadata["seed"] = std::to_string(inputs.seed);
    report.metadata["reference_selection_seed"] = std::to_string(inputs.seed);
    report.metadata["num_steps"] = std::to_string(inputs.sample.num_steps);
    report.metadata["guidance_scale"] = std::to_string(inputs.sample.guidance_scale);

    Rng ref_rng = Rng(inputs.seed).fork("mofid.reference");
    Rng gen_rng = Rng(inputs.seed).fork("benchmark.generate");
    for (const auto& entry : inputs.motions) {
        if (!entry.references || entry.references->clips.empty()) {
            throw ValidationError("evaluate_benchmark: no references for motion " +
                                  entry.motion_id);
        }
        const std::string verb = !entry.verb.empty()
                                     ? entry.verb
                                     : (entry.checkpoint ? entry.checkpoint->verb_token
                                                         : entry.references->verb);
        const auto prompts = build_eval_prompts(inputs.subjects, inputs.contexts, verb);

        const auto ref_idx = static_cast<std::size_t>(ref_rng.uniform_int(
            static_cast<std::int64_t>(entry.references->clips.size())));
        const Tensor ref_emb = embedder.embed_clip(entry.references->clips[ref_idx]);

        for (const auto& p : prompts) {
            SampleConfig sc = inputs.sample;
            sc.seed = gen_rng.next_u64();
            GenerateOptions opts;
            opts.motion = entry.checkpoint;
            const VideoClip clip = generate(model, p.prompt, sc, opts);

            EvalRow row;
            row.motion = entry.motion_id;
            row.template_id = p.template_id;
            row.prompt = p.prompt;
            row.clip_t = clip_t(clip, p.prompt, provider);
            row.clip_e = clip_e(clip, p.entity_prompt, provider);
            row.temp_cons = temp_cons(clip, provider);
            row.mofid = cosine_similarity(ref_emb, embedder.embed_clip(clip));
            report.rows.push_back(std::move(row));
        }
    }
    report.finalize();
    return report;
}

Tensor frame_palette_histogram(const Tensor& frame) {
    if (frame.rank() != 3 || frame.dim(2) != 3) {
        throw ShapeError("frame_palette_histogram: frame must be [H,W,3]");
    }
    Tensor hist({8});
    const std::int64_t n = frame.dim(0) * frame.dim(1);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* p = frame.data() + i * 3;
        hist[nearest_palette_index(p[0], p[1], p[2])] += 1.0;
    }
    return scale(hist, 1.0 / static_cast<double>(n));
}

double histogram_l1_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("histogram_l1_distance: shape mismatch");
    double acc = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += std::fabs(a[i] - b[i]);
    return acc;
}

Tensor palette_color_histogram(int palette_index) {
    Tensor hist({8});
    hist[palette_index] = 1.0;
    return hist;
}

}  // namespace vmt
