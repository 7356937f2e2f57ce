#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "vmt/data.hpp"
#include "vmt/errors.hpp"
#include "vmt/eval.hpp"
#include "vmt/rng.hpp"
#include "vmt/text_encoder.hpp"

using namespace vmt;

namespace {

// Kasa least-squares circle fit; returns the RMS radial residual.
double circle_fit_residual(const std::vector<std::array<double, 2>>& pts) {
    const auto n = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd A(n, 3);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = pts[static_cast<std::size_t>(i)][0];
        const double y = pts[static_cast<std::size_t>(i)][1];
        A(i, 0) = 2 * x;
        A(i, 1) = 2 * y;
        A(i, 2) = 1;
        b(i) = x * x + y * y;
    }
    const Eigen::Vector3d sol = A.colPivHouseholderQr().solve(b);
    const double cx = sol(0), cy = sol(1);
    const double r = std::sqrt(sol(2) + cx * cx + cy * cy);
    double acc = 0;
    for (const auto& p : pts) {
        const double d = std::hypot(p[0] - cx, p[1] - cy) - r;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pts.size()));
}

std::vector<std::array<double, 2>> measured_centroids(const VideoClip& clip) {
    std::vector<std::array<double, 2>> pts;
    for (std::int64_t i = 0; i < clip.frame_count(); ++i) {
        pts.push_back(frame_foreground_centroid(clip.frame(i)));
    }
    return pts;
}

}  // namespace

TEST(Synth, DeterministicForFixedSpec) {
    SynthSpec spec;
    spec.jitter_seed = 9;
    VideoClip a = synth_motion_video(spec, 8, 32, 32);
    VideoClip b = synth_motion_video(spec, 8, 32, 32);
    ASSERT_EQ(a.frames.numel(), b.frames.numel());
    for (std::int64_t i = 0; i < a.frames.numel(); ++i) {
        ASSERT_EQ(a.frames[i], b.frames[i]);
    }
}

TEST(Synth, CircleTrajectoryFitsCircleWithinHalfPixel) {
    for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
        SynthSpec spec;
        spec.trajectory = Trajectory::circle;
        spec.jitter_seed = seed;
        // Measured centroids of the rendered frames, not the generator's own
        // positions: the anti-aliased rendering must track the trajectory.
        VideoClip clip = synth_motion_video(spec, 12, 32, 32);
        const double rms = circle_fit_residual(measured_centroids(clip));
        EXPECT_LT(rms, 0.5) << "seed " << seed;
    }
}

TEST(Synth, TrajectoriesMatchMeasuredCentroids) {
    for (Trajectory t : {Trajectory::circle, Trajectory::bounce, Trajectory::sweep,
                         Trajectory::lift}) {
        SynthSpec spec;
        spec.trajectory = t;
        spec.jitter_seed = 3;
        const auto planned = synth_trajectory(spec, 8, 32, 32);
        VideoClip clip = synth_motion_video(spec, 8, 32, 32);
        const auto measured = measured_centroids(clip);
        for (std::size_t i = 0; i < planned.size(); ++i) {
            EXPECT_NEAR(planned[i][0], measured[i][0], 0.35) << to_string(t) << " frame " << i;
            EXPECT_NEAR(planned[i][1], measured[i][1], 0.35) << to_string(t) << " frame " << i;
        }
    }
}

TEST(Synth, ColorHistogramDominatedByForegroundAndBackground) {
    SynthSpec spec;  // red square on white
    VideoClip clip = synth_motion_video(spec, 4, 32, 32);
    Tensor hist = frame_palette_histogram(clip.frame(0));
    EXPECT_GT(hist[6], 0.80);             // white background dominates
    EXPECT_GT(hist[0], 0.05);             // red foreground present
    EXPECT_GT(hist[0] + hist[6], 0.97);   // nothing else matters
}

// Appearance and motion factorize: appearance changes leave the emitted
// trajectory bit-identical, trajectory changes leave per-frame coverage (and
// so the color histogram mass) unchanged up to anti-aliased edges.
TEST(Synth, AppearanceMotionFactorization) {
    SynthSpec red_square;
    red_square.jitter_seed = 5;
    SynthSpec blue_disk = red_square;
    blue_disk.color = palette_rgb(2);
    blue_disk.shape = Shape::disk;
    const auto traj_a = synth_trajectory(red_square, 8, 32, 32);
    const auto traj_b = synth_trajectory(blue_disk, 8, 32, 32);
    for (std::size_t i = 0; i < traj_a.size(); ++i) {
        EXPECT_EQ(traj_a[i][0], traj_b[i][0]);
        EXPECT_EQ(traj_a[i][1], traj_b[i][1]);
    }

    SynthSpec circling = red_square;
    SynthSpec lifting = red_square;
    lifting.trajectory = Trajectory::lift;
    VideoClip a = synth_motion_video(circling, 8, 32, 32);
    VideoClip b = synth_motion_video(lifting, 8, 32, 32);
    for (std::int64_t f = 0; f < 8; ++f) {
        Tensor ha = frame_palette_histogram(a.frame(f));
        Tensor hb = frame_palette_histogram(b.frame(f));
        EXPECT_LT(histogram_l1_distance(ha, hb), 0.02) << "frame " << f;
    }
}

TEST(Synth, OutOfFrameTrajectoryRejected) {
    SynthSpec spec;
    spec.trajectory = Trajectory::bounce;
    // A flat canvas leaves the bounce arc no vertical room.
    EXPECT_THROW(synth_motion_video(spec, 8, 4, 32), ValidationError);
}

TEST(Synth, PromptVocabularyIsDeterministic) {
    SynthSpec spec;
    spec.color = palette_rgb(0);
    spec.shape = Shape::square;
    spec.trajectory = Trajectory::circle;
    spec.background = palette_rgb(6);
    EXPECT_EQ(spec_prompt(spec), "a red square is circling on a white background");
    spec.shape = Shape::triangle;
    spec.trajectory = Trajectory::lift;
    spec.color = palette_rgb(2);
    EXPECT_EQ(spec_prompt(spec), "a blue triangle is lifting on a white background");
}

TEST(Dataset, SaveLoadRoundTripAndValidation) {
    const auto dir = std::filesystem::temp_directory_path() / "vmt_test_dataset";
    std::filesystem::remove_all(dir);

    MotionDataset ds;
    ds.motion_id = "circle";
    ds.verb = "circling";
    ds.fps = 8.0;
    for (int i = 0; i < 4; ++i) {
        SynthSpec spec;
        spec.jitter_seed = static_cast<std::uint64_t>(i);
        ds.clips.push_back(synth_motion_video(spec, 8, 32, 32));
        ds.base_prompts.push_back(spec_prompt(spec));
    }
    save_motion_dataset(dir, ds);
    MotionDataset loaded = load_motion_dataset(dir);
    EXPECT_EQ(loaded.motion_id, "circle");
    EXPECT_EQ(loaded.verb, "circling");
    EXPECT_EQ(loaded.clips.size(), 4u);
    EXPECT_EQ(loaded.base_prompts[0], ds.base_prompts[0]);
    // PPM round trip is lossless for palette colors.
    for (std::int64_t i = 0; i < ds.clips[0].frames.numel(); ++i) {
        EXPECT_NEAR(loaded.clips[0].frames[i], ds.clips[0].frames[i], 0.5 / 255.0);
    }
    std::filesystem::remove_all(dir);
}

TEST(Dataset, SingleClipAcceptedEmptyRejected) {
    MotionDataset one;
    one.motion_id = "lift";
    one.verb = "lifting";
    SynthSpec spec;
    spec.trajectory = Trajectory::lift;
    one.clips.push_back(synth_motion_video(spec, 8, 32, 32));
    one.base_prompts.push_back(spec_prompt(spec));
    EXPECT_NO_THROW(one.validate());  // one-shot mode

    MotionDataset empty;
    empty.motion_id = "lift";
    empty.verb = "lifting";
    EXPECT_THROW(empty.validate(), ValidationError);
}

TEST(Dataset, ListsAllProblems) {
    MotionDataset bad;
    bad.motion_id = "circle";
    bad.verb = "circling";
    SynthSpec spec;
    bad.clips.push_back(synth_motion_video(spec, 4, 32, 32));
    bad.clips.push_back(synth_motion_video(spec, 4, 16, 16));  // mixed resolution
    bad.base_prompts.push_back("a red square on a white background");  // missing verb
    bad.base_prompts.push_back(spec_prompt(spec));
    try {
        bad.validate();
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("mixed resolution"), std::string::npos);
        EXPECT_NE(msg.find("lacks the verb"), std::string::npos);
    }
}

TEST(Dataset, MixedFpsRejected) {
    MotionDataset ds;
    ds.motion_id = "circle";
    ds.verb = "circling";
    ds.fps = 8.0;
    SynthSpec spec;
    ds.clips.push_back(synth_motion_video(spec, 4, 32, 32, 8.0));
    ds.clips.push_back(synth_motion_video(spec, 4, 32, 32, 12.0));
    ds.base_prompts = {spec_prompt(spec), spec_prompt(spec)};
    EXPECT_THROW(ds.validate(), ValidationError);
}

TEST(EvalPrompts, SixTemplatesCoverSubjectAndContext) {
    const auto prompts =
        build_eval_prompts({"cat", "panda", "robot"}, {"in the living room", "on the street"},
                           "skateboarding");
    ASSERT_EQ(prompts.size(), 6u);
    EXPECT_EQ(prompts[0].prompt, "A cat is skateboarding in the living room");
    EXPECT_EQ(prompts[0].entity_prompt, "a cat");
    std::set<std::pair<std::string, std::string>> combos;
    for (const auto& p : prompts) {
        combos.emplace(p.subject, p.context);
        const auto tokens = TextEncoder::tokenize(p.prompt);
        EXPECT_NE(std::find(tokens.begin(), tokens.end(), "skateboarding"), tokens.end());
    }
    EXPECT_EQ(combos.size(), 6u);  // all subject/context pairs distinct
    EXPECT_THROW(build_eval_prompts({}, {"x"}, "v"), ValidationError);
}
