#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmt/appearance.hpp"
#include "vmt/video.hpp"

namespace vmt {

enum class Shape { square, triangle, disk };
enum class Trajectory { circle, bounce, sweep, lift };

std::string to_string(Shape s);
std::string to_string(Trajectory t);
Shape shape_from_string(const std::string& s);
Trajectory trajectory_from_string(const std::string& s);

/// The verb the deterministic prompt vocabulary assigns to a trajectory
/// (circle -> "circling" and so on).
std::string trajectory_verb(Trajectory t);

/// Specification of one procedural clip. Appearance (shape, color,
/// background) and motion (trajectory) factorize: changing one leaves the
/// other's contribution untouched.
struct SynthSpec {
    Shape shape = Shape::square;
    std::array<double, 3> color = {230 / 255.0, 30 / 255.0, 30 / 255.0};
    Trajectory trajectory = Trajectory::circle;
    std::array<double, 3> background = {245 / 255.0, 245 / 255.0, 245 / 255.0};
    std::uint64_t jitter_seed = 0;
};

/// Exact sub-pixel foreground positions for each frame; the renderer places
/// the shape at precisely these coordinates.
std::vector<std::array<double, 2>> synth_trajectory(const SynthSpec& spec, int frames, int height,
                                                    int width);

/// Deterministic anti-aliased render of spec over the given frame count.
/// Throws if the trajectory would push the shape out of frame.
VideoClip synth_motion_video(const SynthSpec& spec, int frames, int height = 32, int width = 32,
                             double fps = 8.0);

/// "a {color} {shape} is {verb} on a {background} background".
std::string spec_prompt(const SynthSpec& spec);

/// Reference videos that share one motion concept.
struct MotionDataset {
    std::string motion_id;
    std::string verb;
    double fps = 8.0;
    std::vector<VideoClip> clips;
    std::vector<std::string> base_prompts;  // one per clip

    void validate() const;
};

// Directory layout (documented byte-exactly; see README):
//   meta.txt     key=value lines: motion_id, verb, fps
//   prompts.txt  "<clip_name>\t<base prompt>" per clip, sorted by name
//   clips/<clip_name>/frame_0000.ppm ...
MotionDataset load_motion_dataset(const std::filesystem::path& dir);
void save_motion_dataset(const std::filesystem::path& dir, const MotionDataset& dataset);

/// One instantiated evaluation template.
struct EvalPrompt {
    std::string prompt;         // "A {subject} is {verb} {context}"
    std::string entity_prompt;  // "a {subject}"
    std::string subject;
    std::string context;
    int template_id = 0;
};

/// Exactly six templates varying subject and context around the fixed verb.
std::vector<EvalPrompt> build_eval_prompts(const std::vector<std::string>& subjects,
                                           const std::vector<std::string>& contexts,
                                           const std::string& verb);

}  // namespace vmt
