// vmt: motion-transfer pipeline driver.
//
// Subcommands: synth-data, base-init, recaption, train-appearance,
// train-motion, generate, evaluate. Every run writes a manifest JSON next to
// its primary output. Exit codes: 0 ok, 1 runtime error, 2 usage error,
// 3 validation error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "vmt/appearance.hpp"
#include "vmt/archive.hpp"
#include "vmt/backbone.hpp"
#include "vmt/data.hpp"
#include "vmt/errors.hpp"
#include "vmt/eval.hpp"
#include "vmt/lora.hpp"
#include "vmt/manifest.hpp"
#include "vmt/motion_enhancer.hpp"
#include "vmt/sampling.hpp"
#include "vmt/training.hpp"
#include "vmt/video.hpp"

namespace {

using vmt::RunManifest;

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::array<double, 3> parse_color(const std::string& name) {
    if (auto idx = vmt::palette_index_by_name(name)) return vmt::palette_rgb(*idx);
    throw vmt::ValidationError("unknown color name: " + name);
}

void write_manifest(RunManifest& m, const std::filesystem::path& primary_output,
                    double wallclock) {
    m.wallclock_seconds = wallclock;
    std::filesystem::path p = primary_output;
    p += ".manifest.json";
    m.save(p);
}

vmt::TrainConfig load_train_config(const std::optional<std::string>& config_file) {
    if (config_file) return vmt::TrainConfig::from_file(*config_file);
    return vmt::TrainConfig{};
}

std::unique_ptr<vmt::RecaptionClient> make_recaption_client(const std::string& kind,
                                                            const std::string& endpoint) {
    if (kind == "mock") return std::make_unique<vmt::MockRecaptioner>();
    if (kind == "http") {
        // endpoint: host:port[/path]
        const auto colon = endpoint.find(':');
        if (colon == std::string::npos) {
            throw vmt::ValidationError("http recaptioner needs --endpoint host:port[/path]");
        }
        const std::string host = endpoint.substr(0, colon);
        std::string rest = endpoint.substr(colon + 1);
        std::string path = "/recaption";
        const auto slash = rest.find('/');
        if (slash != std::string::npos) {
            path = rest.substr(slash);
            rest = rest.substr(0, slash);
        }
        return std::make_unique<vmt::HttpRecaptioner>(host, std::stoi(rest), path);
    }
    throw vmt::ValidationError("unknown recaption client: " + kind);
}

int run(int argc, char** argv) {
    CLI::App app{"desk-scale customized motion transfer for text-to-video diffusion"};
    app.require_subcommand(1);

    // --- synth-data ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth-data", "generate a procedural motion dataset");
    std::string sd_out, sd_motion = "circle", sd_shape = "square", sd_color = "red",
                sd_background = "white";
    int sd_clips = 4, sd_frames = 8, sd_size = 32;
    std::uint64_t sd_seed = 0;
    bool sd_vary = false;
    synth->add_option("--out", sd_out, "output dataset directory")->required();
    synth->add_option("--motion", sd_motion, "trajectory: circle|bounce|sweep|lift");
    synth->add_option("--shape", sd_shape, "shape: square|triangle|disk");
    synth->add_option("--color", sd_color, "foreground palette color");
    synth->add_option("--background", sd_background, "background palette color");
    synth->add_option("--clips", sd_clips, "number of clips");
    synth->add_option("--frames", sd_frames, "frames per clip");
    synth->add_option("--size", sd_size, "frame height and width");
    synth->add_option("--seed", sd_seed, "jitter seed base");
    synth->add_flag("--vary-appearance", sd_vary,
                    "draw the shape and color per clip instead of keeping them fixed");

    // --- base-init ----------------------------------------------------------
    auto* base = app.add_subcommand("base-init",
                                    "materialize the seeded (and optionally pretrained) "
                                    "frozen base model archive");
    std::string bi_out;
    std::uint64_t bi_seed = 17;
    int bi_steps = 1600;
    double bi_lr = 2e-3;
    base->add_option("--out", bi_out, "output backbone archive")->required();
    base->add_option("--seed", bi_seed, "base weight seed");
    base->add_option("--pretrain-steps", bi_steps,
                     "synthetic pretraining steps (0 = raw seeded weights)");
    base->add_option("--pretrain-lr", bi_lr, "pretraining learning rate");

    // --- recaption ----------------------------------------------------------
    auto* recap = app.add_subcommand("recaption", "expand dataset prompts with the recaptioner");
    std::string rc_dataset, rc_out, rc_client = "mock", rc_endpoint;
    std::uint64_t rc_seed = 0;
    recap->add_option("--dataset", rc_dataset, "dataset directory")->required();
    recap->add_option("--out", rc_out, "output recaption table")->required();
    recap->add_option("--client", rc_client, "mock|http");
    recap->add_option("--endpoint", rc_endpoint, "host:port[/path] for the http client");
    recap->add_option("--seed", rc_seed, "frame selection seed");

    // --- train-appearance ---------------------------------------------------
    auto* ta = app.add_subcommand("train-appearance", "stage 1: train spatial adapters");
    std::string ta_dataset, ta_base, ta_out, ta_client = "mock", ta_endpoint, ta_log;
    std::optional<std::string> ta_config;
    std::optional<int> ta_steps, ta_rank;
    std::optional<double> ta_lr;
    std::optional<std::uint64_t> ta_seed;
    ta->add_option("--dataset", ta_dataset)->required();
    ta->add_option("--base", ta_base, "backbone archive")->required();
    ta->add_option("--out", ta_out, "output spatial adapter checkpoint")->required();
    ta->add_option("--config", ta_config, "key=value config file");
    ta->add_option("--steps", ta_steps);
    ta->add_option("--lr", ta_lr);
    ta->add_option("--rank", ta_rank);
    ta->add_option("--seed", ta_seed);
    ta->add_option("--client", ta_client, "mock|http");
    ta->add_option("--endpoint", ta_endpoint);
    ta->add_option("--log", ta_log, "training log TSV path");

    // --- train-motion -------------------------------------------------------
    auto* tm = app.add_subcommand("train-motion", "stage 2: train temporal adapters + enhancer");
    std::string tm_dataset, tm_base, tm_spatial, tm_out, tm_log, tm_provider;
    std::optional<std::string> tm_config;
    std::optional<int> tm_steps, tm_rank;
    std::optional<double> tm_lr, tm_lambda;
    std::optional<std::uint64_t> tm_seed;
    tm->add_option("--dataset", tm_dataset)->required();
    tm->add_option("--base", tm_base)->required();
    tm->add_option("--spatial", tm_spatial, "stage-1 spatial checkpoint")->required();
    tm->add_option("--out", tm_out, "output motion checkpoint")->required();
    tm->add_option("--config", tm_config);
    tm->add_option("--steps", tm_steps);
    tm->add_option("--lr", tm_lr);
    tm->add_option("--rank", tm_rank);
    tm->add_option("--lambda", tm_lambda, "residual regularization weight");
    tm->add_option("--seed", tm_seed);
    tm->add_option("--provider", tm_provider, "embedding provider name");
    tm->add_option("--log", tm_log, "training log TSV path");

    // --- generate -----------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "DDIM generation with a motion checkpoint");
    std::string g_prompt, g_base, g_motion, g_subject, g_out, g_preview;
    int g_steps = 30, g_frames = -1;
    double g_cfg = 12.0, g_eta = 0.0, g_fps = 8.0;
    std::uint64_t g_seed = 0;
    std::optional<int> g_verb_index;
    gen->add_option("--prompt", g_prompt)->required();
    gen->add_option("--base", g_base)->required();
    gen->add_option("--motion", g_motion, "motion checkpoint (omit for the raw base model)");
    gen->add_option("--subject", g_subject, "optional subject spatial checkpoint");
    gen->add_option("--out", g_out, "output frame directory")->required();
    gen->add_option("--steps", g_steps, "DDIM steps");
    gen->add_option("--cfg", g_cfg, "classifier-free guidance scale");
    gen->add_option("--eta", g_eta);
    gen->add_option("--frames", g_frames, "frame count (-1: backbone default)");
    gen->add_option("--fps", g_fps);
    gen->add_option("--seed", g_seed);
    gen->add_option("--verb-index", g_verb_index, "explicit verb token index");
    gen->add_option("--preview", g_preview, "optional animated GIF path");

    // --- evaluate -----------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "four-metric benchmark over motion checkpoints");
    std::vector<std::string> ev_motions, ev_refs, ev_subjects, ev_contexts;
    std::string ev_base, ev_out, ev_provider = "toy-clip";
    int ev_steps = 30;
    double ev_cfg = 12.0;
    std::uint64_t ev_seed = 0;
    bool ev_baseline = false;
    ev->add_option("--base", ev_base)->required();
    ev->add_option("--motions", ev_motions, "motion checkpoints")->delimiter(',');
    ev->add_option("--references", ev_refs, "reference dataset dirs (one per motion)")
        ->delimiter(',')
        ->required();
    ev->add_option("--out", ev_out, "report TSV path")->required();
    ev->add_option("--subjects", ev_subjects)->delimiter(',');
    ev->add_option("--contexts", ev_contexts)->delimiter(',');
    ev->add_option("--provider", ev_provider);
    ev->add_option("--steps", ev_steps);
    ev->add_option("--cfg", ev_cfg);
    ev->add_option("--seed", ev_seed);
    ev->add_flag("--baseline", ev_baseline, "evaluate the untuned base model instead");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // 0 covers --help; anything else is a usage error
    }
    Stopwatch watch;

    if (synth->parsed()) {
        vmt::MotionDataset ds;
        ds.motion_id = sd_motion;
        ds.verb = vmt::trajectory_verb(vmt::trajectory_from_string(sd_motion));
        ds.fps = 8.0;
        vmt::Rng rng(sd_seed);
        for (int i = 0; i < sd_clips; ++i) {
            vmt::SynthSpec spec;
            spec.trajectory = vmt::trajectory_from_string(sd_motion);
            if (sd_vary) {
                const int fg = static_cast<int>(rng.uniform_int(6));  // skip white/black
                spec.color = vmt::palette_rgb(fg);
                spec.shape = static_cast<vmt::Shape>(rng.uniform_int(3));
            } else {
                spec.color = parse_color(sd_color);
                spec.shape = vmt::shape_from_string(sd_shape);
            }
            spec.background = parse_color(sd_background);
            spec.jitter_seed = rng.next_u64();
            ds.clips.push_back(vmt::synth_motion_video(spec, sd_frames, sd_size, sd_size));
            ds.base_prompts.push_back(vmt::spec_prompt(spec));
        }
        vmt::save_motion_dataset(sd_out, ds);
        RunManifest m;
        m.command = "synth-data";
        m.config = {{"motion", sd_motion},
                    {"clips", std::to_string(sd_clips)},
                    {"frames", std::to_string(sd_frames)},
                    {"size", std::to_string(sd_size)}};
        m.seeds["jitter"] = std::to_string(sd_seed);
        m.outputs["dataset"] = sd_out;
        write_manifest(m, std::filesystem::path(sd_out) / "dataset", watch.seconds());
        std::cout << "wrote " << sd_clips << " clips to " << sd_out << "\n";
        return 0;
    }

    if (base->parsed()) {
        vmt::Backbone model = vmt::Backbone::seeded(bi_seed);
        if (bi_steps > 0) {
            vmt::PretrainConfig pc;
            pc.steps = bi_steps;
            pc.learning_rate = bi_lr;
            pc.seed = bi_seed;
            vmt::pretrain_backbone(model, pc, [](const vmt::TrainLogRecord& r) {
                if (r.step % 100 == 0) {
                    std::cout << "pretrain step " << r.step << " loss " << r.l_t << "\n";
                }
            });
        }
        model.save(bi_out);
        RunManifest m;
        m.command = "base-init";
        m.config["pretrain_steps"] = std::to_string(bi_steps);
        m.config["pretrain_lr"] = std::to_string(bi_lr);
        m.seeds["base"] = std::to_string(bi_seed);
        m.outputs["backbone"] = bi_out;
        m.checkpoint_hashes["backbone"] =
            vmt::hash_hex(vmt::TensorArchive::load(bi_out).content_hash());
        write_manifest(m, bi_out, watch.seconds());
        std::cout << "wrote base archive " << bi_out << "\n";
        return 0;
    }

    if (recap->parsed()) {
        const vmt::MotionDataset ds = vmt::load_motion_dataset(rc_dataset);
        auto client = make_recaption_client(rc_client, rc_endpoint);
        vmt::Rng rng = vmt::Rng(rc_seed).fork("recaption.frame");
        std::ofstream os(rc_out);
        if (!os) throw vmt::Error("cannot open " + rc_out);
        for (std::size_t i = 0; i < ds.clips.size(); ++i) {
            vmt::PromptSpec spec;
            spec.base_prompt = ds.base_prompts[i];
            const auto fi = rng.uniform_int(ds.clips[i].frame_count());
            const vmt::PromptSpec out = vmt::recaption(spec, ds.clips[i].frame(fi), *client);
            os << i << "\t" << out.effective_prompt() << "\n";
        }
        RunManifest m;
        m.command = "recaption";
        m.config["client"] = rc_client;
        m.seeds["frame"] = std::to_string(rc_seed);
        m.inputs["dataset"] = rc_dataset;
        m.outputs["table"] = rc_out;
        write_manifest(m, rc_out, watch.seconds());
        std::cout << "wrote recaption table " << rc_out << "\n";
        return 0;
    }

    if (ta->parsed()) {
        vmt::TrainConfig cfg = load_train_config(ta_config);
        if (ta_steps) cfg.max_steps = *ta_steps;
        if (ta_lr) cfg.learning_rate = *ta_lr;
        if (ta_rank) cfg.lora_rank = *ta_rank;
        if (ta_seed) cfg.seed = *ta_seed;
        cfg.validate();
        const vmt::Backbone model = vmt::Backbone::load(ta_base);
        const vmt::MotionDataset ds = vmt::load_motion_dataset(ta_dataset);
        auto client = make_recaption_client(ta_client, ta_endpoint);
        std::optional<vmt::TrainLogWriter> logw;
        if (!ta_log.empty()) logw.emplace(ta_log);
        vmt::Stage1Result result = vmt::train_appearance(
            model, ds, cfg, *client,
            [&](const vmt::TrainLogRecord& r) { if (logw) logw->append(r); });
        result.save(ta_out);
        RunManifest m;
        m.command = "train-appearance";
        m.config = cfg.to_map();
        m.seeds["train"] = std::to_string(cfg.seed);
        m.inputs["dataset"] = ta_dataset;
        m.inputs["backbone"] = ta_base;
        m.outputs["spatial"] = ta_out;
        m.checkpoint_hashes["backbone"] =
            vmt::hash_hex(vmt::TensorArchive::load(ta_base).content_hash());
        m.checkpoint_hashes["spatial"] =
            vmt::hash_hex(vmt::TensorArchive::load(ta_out).content_hash());
        write_manifest(m, ta_out, watch.seconds());
        std::cout << "wrote spatial checkpoint " << ta_out << "\n";
        return 0;
    }

    if (tm->parsed()) {
        vmt::TrainConfig cfg = load_train_config(tm_config);
        if (tm_steps) cfg.max_steps = *tm_steps;
        if (tm_lr) cfg.learning_rate = *tm_lr;
        if (tm_rank) cfg.lora_rank = *tm_rank;
        if (tm_lambda) cfg.lambda_reg = *tm_lambda;
        if (tm_seed) cfg.seed = *tm_seed;
        if (!tm_provider.empty()) cfg.provider = tm_provider;
        cfg.validate();
        const vmt::Backbone model = vmt::Backbone::load(tm_base);
        const vmt::MotionDataset ds = vmt::load_motion_dataset(tm_dataset);
        vmt::AdapterSet spatial = vmt::AdapterSet::load(tm_spatial);
        auto provider = vmt::ProviderRegistry::instance().create(cfg.provider);
        std::optional<vmt::TrainLogWriter> logw;
        if (!tm_log.empty()) logw.emplace(tm_log);
        vmt::MotionCheckpoint ckpt = vmt::train_motion(
            model, ds, spatial, cfg, *provider,
            [&](const vmt::TrainLogRecord& r) { if (logw) logw->append(r); });
        ckpt.save(tm_out);
        RunManifest m;
        m.command = "train-motion";
        m.config = cfg.to_map();
        m.seeds["train"] = std::to_string(cfg.seed);
        m.inputs["dataset"] = tm_dataset;
        m.inputs["backbone"] = tm_base;
        m.inputs["spatial"] = tm_spatial;
        m.outputs["motion"] = tm_out;
        m.checkpoint_hashes["spatial"] =
            vmt::hash_hex(vmt::TensorArchive::load(tm_spatial).content_hash());
        m.checkpoint_hashes["motion"] =
            vmt::hash_hex(vmt::TensorArchive::load(tm_out).content_hash());
        write_manifest(m, tm_out, watch.seconds());
        std::cout << "wrote motion checkpoint " << tm_out << "\n";
        return 0;
    }

    if (gen->parsed()) {
        const vmt::Backbone model = vmt::Backbone::load(g_base);
        std::optional<vmt::MotionCheckpoint> motion;
        if (!g_motion.empty()) motion = vmt::MotionCheckpoint::load(g_motion);
        std::optional<vmt::AdapterSet> subject;
        if (!g_subject.empty()) {
            subject = vmt::AdapterSet::load(g_subject);
            subject->set_trainable(false);
        }
        vmt::SampleConfig sc;
        sc.num_steps = g_steps;
        sc.guidance_scale = g_cfg;
        sc.eta = g_eta;
        sc.fps = g_fps;
        sc.seed = g_seed;
        if (g_frames > 0) sc.frames = g_frames;
        vmt::GenerateOptions opts;
        if (motion) opts.motion = &*motion;
        if (subject) opts.subject_spatial = &*subject;
        opts.verb_index_override = g_verb_index;
        const vmt::VideoClip clip = vmt::generate(model, g_prompt, sc, opts);
        vmt::save_clip_frames(g_out, clip);
        if (!g_preview.empty()) vmt::write_gif(g_preview, clip);

        RunManifest m;
        m.command = "generate";
        m.config = {{"prompt", g_prompt},
                    {"num_steps", std::to_string(sc.num_steps)},
                    {"guidance_scale", std::to_string(sc.guidance_scale)},
                    {"eta", std::to_string(sc.eta)},
                    {"frames", std::to_string(sc.resolved_frames(model.config()))},
                    {"fps", std::to_string(sc.fps)}};
        m.seeds["sample"] = std::to_string(sc.seed);
        m.inputs["backbone"] = g_base;
        if (!g_motion.empty()) {
            m.inputs["motion"] = g_motion;
            m.checkpoint_hashes["motion"] =
                vmt::hash_hex(vmt::TensorArchive::load(g_motion).content_hash());
        }
        if (!g_subject.empty()) {
            m.inputs["subject"] = g_subject;
            m.checkpoint_hashes["subject"] =
                vmt::hash_hex(vmt::TensorArchive::load(g_subject).content_hash());
        }
        m.checkpoint_hashes["backbone"] =
            vmt::hash_hex(vmt::TensorArchive::load(g_base).content_hash());
        m.outputs["frames"] = g_out;
        write_manifest(m, std::filesystem::path(g_out) / "clip", watch.seconds());
        std::cout << "wrote " << clip.frame_count() << " frames to " << g_out << "\n";
        return 0;
    }

    if (ev->parsed()) {
        if (!ev_baseline && ev_motions.size() != ev_refs.size()) {
            throw vmt::ValidationError(
                "evaluate: need one motion checkpoint per reference dataset "
                "(or --baseline)");
        }
        const vmt::Backbone model = vmt::Backbone::load(ev_base);
        if (ev_subjects.empty()) ev_subjects = {"red square", "blue triangle", "green disk"};
        if (ev_contexts.empty()) {
            ev_contexts = {"on a white background", "on a black background"};
        }
        std::vector<vmt::MotionCheckpoint> ckpts;
        std::vector<vmt::MotionDataset> refs;
        for (const auto& r : ev_refs) refs.push_back(vmt::load_motion_dataset(r));
        if (!ev_baseline) {
            for (const auto& c : ev_motions) ckpts.push_back(vmt::MotionCheckpoint::load(c));
        }
        vmt::BenchmarkInputs inputs;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            vmt::BenchmarkEntry e;
            e.motion_id = refs[i].motion_id;
            e.references = &refs[i];
            e.checkpoint = ev_baseline ? nullptr : &ckpts[i];
            inputs.motions.push_back(e);
        }
        inputs.subjects = ev_subjects;
        inputs.contexts = ev_contexts;
        inputs.sample.num_steps = ev_steps;
        inputs.sample.guidance_scale = ev_cfg;
        inputs.seed = ev_seed;
        auto provider = vmt::ProviderRegistry::instance().create(ev_provider);
        vmt::TrajectoryEmbedder embedder;
        vmt::EvalReport report = vmt::evaluate_benchmark(model, inputs, *provider, embedder);
        report.save(ev_out);
        RunManifest m;
        m.command = "evaluate";
        m.config = {{"provider", ev_provider},
                    {"num_steps", std::to_string(ev_steps)},
                    {"guidance_scale", std::to_string(ev_cfg)},
                    {"baseline", ev_baseline ? "1" : "0"}};
        m.seeds["eval"] = std::to_string(ev_seed);
        m.outputs["report"] = ev_out;
        write_manifest(m, ev_out, watch.seconds());
        std::cout << "wrote report " << ev_out << "\n";
        return 0;
    }

    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const vmt::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 3;
    } catch (const vmt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
