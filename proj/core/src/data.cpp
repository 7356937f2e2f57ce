#include "vmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "vmt/errors.hpp"
#include "vmt/rng.hpp"
#include "vmt/text_encoder.hpp"

namespace vmt {

std::string to_string(Shape s) {
    switch (s) {
        case Shape::square: return "square";
        case Shape::triangle: return "triangle";
        case Shape::disk: return "disk";
    }
    return "square";
}

std::string to_string(Trajectory t) {
    switch (t) {
        case Trajectory::circle: return "circle";
        case Trajectory::bounce: return "bounce";
        case Trajectory::sweep: return "sweep";
        case Trajectory::lift: return "lift";
    }
    return "circle";
}

Shape shape_from_string(const std::string& s) {
    if (s == "square") return Shape::square;
    if (s == "triangle") return Shape::triangle;
    if (s == "disk") return Shape::disk;
    throw ValidationError("unknown shape: " + s);
}

Trajectory trajectory_from_string(const std::string& s) {
    if (s == "circle") return Trajectory::circle;
    if (s == "bounce") return Trajectory::bounce;
    if (s == "sweep") return Trajectory::sweep;
    if (s == "lift") return Trajectory::lift;
    throw ValidationError("unknown trajectory: " + s);
}

std::string trajectory_verb(Trajectory t) {
    switch (t) {
        case Trajectory::circle: return "circling";
        case Trajectory::bounce: return "bouncing";
        case Trajectory::sweep: return "sweeping";
        case Trajectory::lift: return "lifting";
    }
    return "circling";
}

namespace {

double shape_half_extent(int height, int width) {
    return 0.15 * static_cast<double>(std::min(height, width));
}

// Signed coverage test for a unit placement: is (dx, dy) inside the shape?
bool inside_shape(Shape shape, double dx, double dy, double e) {
    switch (shape) {
        case Shape::square:
            return std::fabs(dx) <= e && std::fabs(dy) <= e;
        case Shape::disk:
            return dx * dx + dy * dy <= e * e;
        case Shape::triangle: {
            // Equilateral, inscribed in radius e, apex up (screen y grows down).
            const double ax = 0.0, ay = -e;
            const double bx = -0.8660254037844386 * e, by = 0.5 * e;
            const double cx = 0.8660254037844386 * e, cy = 0.5 * e;
            auto side = [](double x1, double y1, double x2, double y2, double px, double py) {
                return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            };
            const double d1 = side(ax, ay, bx, by, dx, dy);
            const double d2 = side(bx, by, cx, cy, dx, dy);
            const double d3 = side(cx, cy, ax, ay, dx, dy);
            const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
            const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
            return !(has_neg && has_pos);
        }
    }
    return false;
}

}  // namespace

std::vector<std::array<double, 2>> synth_trajectory(const SynthSpec& spec, int frames, int height,
                                                    int width) {
    if (frames < 1) throw ValidationError("synth_trajectory: frames must be >= 1");
    Rng rng = Rng(spec.jitter_seed).fork("trajectory");
    const double e = shape_half_extent(height, width);
    const double margin = 1.0;
    const double cx0 = 0.5 * (width - 1);
    const double cy0 = 0.5 * (height - 1);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double jitter = 0.2;

    std::vector<std::array<double, 2>> pos(static_cast<std::size_t>(frames));
    for (int i = 0; i < frames; ++i) {
        const double u = frames == 1 ? 0.0 : static_cast<double>(i) / (frames - 1);
        double x = cx0, y = cy0;
        switch (spec.trajectory) {
            case Trajectory::circle: {
                const double radius = 0.25 * std::min(height, width);
                const double theta = phase + 2.0 * M_PI * static_cast<double>(i) / frames;
                x = cx0 + radius * std::cos(theta);
                y = cy0 + radius * std::sin(theta);
                break;
            }
            case Trajectory::bounce: {
                const double ground = height - 1 - margin - e;
                const double amp = 0.38 * height;
                y = ground - amp * std::fabs(std::sin(M_PI * u));
                x = cx0;
                break;
            }
            case Trajectory::sweep: {
                x = margin + e + u * (width - 1 - 2 * (margin + e));
                y = cy0;
                break;
            }
            case Trajectory::lift: {
                x = cx0;
                y = (height - 1 - margin - e) - u * (height - 1 - 2 * (margin + e));
                break;
            }
        }
        x += rng.uniform(-jitter, jitter);
        y += rng.uniform(-jitter, jitter);
        if (x - e < 0 || x + e > width - 1 || y - e < 0 || y + e > height - 1) {
            throw ValidationError("synth_trajectory: shape leaves the frame at step " +
                                  std::to_string(i));
        }
        pos[static_cast<std::size_t>(i)] = {x, y};
    }
    return pos;
}

VideoClip synth_motion_video(const SynthSpec& spec, int frames, int height, int width,
                             double fps) {
    const auto traj = synth_trajectory(spec, frames, height, width);
    const double e = shape_half_extent(height, width);
    Tensor out({frames, height, width, 3});
    constexpr int kSub = 4;  // 4x4 supersampling for sub-pixel coverage
    for (int f = 0; f < frames; ++f) {
        const double cx = traj[static_cast<std::size_t>(f)][0];
        const double cy = traj[static_cast<std::size_t>(f)][1];
        double* frame = out.data() + static_cast<std::int64_t>(f) * height * width * 3;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                int hits = 0;
                for (int sy = 0; sy < kSub; ++sy) {
                    for (int sx = 0; sx < kSub; ++sx) {
                        const double px = x + (sx + 0.5) / kSub - 0.5;
                        const double py = y + (sy + 0.5) / kSub - 0.5;
                        if (inside_shape(spec.shape, px - cx, py - cy, e)) ++hits;
                    }
                }
                const double cov = static_cast<double>(hits) / (kSub * kSub);
                double* p = frame + (static_cast<std::int64_t>(y) * width + x) * 3;
                for (int c = 0; c < 3; ++c) {
                    p[c] = spec.background[static_cast<std::size_t>(c)] +
                           cov * (spec.color[static_cast<std::size_t>(c)] -
                                  spec.background[static_cast<std::size_t>(c)]);
                }
            }
        }
    }
    return VideoClip{std::move(out), fps};
}

std::string spec_prompt(const SynthSpec& spec) {
    const int fg = nearest_palette_index(spec.color[0], spec.color[1], spec.color[2]);
    const int bg = nearest_palette_index(spec.background[0], spec.background[1], spec.background[2]);
    std::ostringstream os;
    os << "a " << palette_name(fg) << " " << to_string(spec.shape) << " is "
       << trajectory_verb(spec.trajectory) << " on a " << palette_name(bg) << " background";
    return os.str();
}

void MotionDataset::validate() const {
    std::vector<std::string> problems;
    if (clips.empty()) problems.push_back("dataset has no clips");
    if (clips.size() != base_prompts.size()) {
        problems.push_back("clip/prompt count mismatch");
    }
    if (motion_id.empty()) problems.push_back("missing motion_id");
    if (verb.empty()) problems.push_back("missing verb");
    std::int64_t h = -1, w = -1;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto& c = clips[i];
        c.validate();
        if (h < 0) {
            h = c.height();
            w = c.width();
        } else if (c.height() != h || c.width() != w) {
            problems.push_back("clip " + std::to_string(i) + " has mixed resolution");
        }
        if (c.fps != fps) {
            problems.push_back("clip " + std::to_string(i) + " has mixed fps");
        }
    }
    for (std::size_t i = 0; i < base_prompts.size(); ++i) {
        const auto tokens = TextEncoder::tokenize(base_prompts[i]);
        if (std::find(tokens.begin(), tokens.end(), verb) == tokens.end()) {
            problems.push_back("prompt " + std::to_string(i) + " lacks the verb token '" + verb +
                               "'");
        }
    }
    if (!problems.empty()) {
        std::string msg = "invalid dataset:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ValidationError(msg);
    }
}

namespace {

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("missing file: " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("malformed line in " + path.string() + ": " + line);
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

MotionDataset load_motion_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw ValidationError("dataset directory not found: " + dir.string());
    }
    const auto meta = read_kv_file(dir / "meta.txt");
    MotionDataset ds;
    auto need = [&](const char* key) {
        auto it = meta.find(key);
        if (it == meta.end()) {
            throw ValidationError("meta.txt missing key '" + std::string(key) + "'");
        }
        return it->second;
    };
    ds.motion_id = need("motion_id");
    ds.verb = need("verb");
    ds.fps = std::stod(need("fps"));

    std::ifstream prompts(dir / "prompts.txt");
    if (!prompts) throw ValidationError("missing prompts: " + (dir / "prompts.txt").string());
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    while (std::getline(prompts, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ValidationError("prompts.txt line lacks a tab separator: " + line);
        }
        entries.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& [clip_name, prompt] : entries) {
        ds.clips.push_back(load_clip_frames(dir / "clips" / clip_name, ds.fps));
        ds.base_prompts.push_back(prompt);
    }
    ds.validate();
    return ds;
}

void save_motion_dataset(const std::filesystem::path& dir, const MotionDataset& dataset) {
    dataset.validate();
    std::filesystem::create_directories(dir / "clips");
    {
        std::ofstream meta(dir / "meta.txt");
        meta << "motion_id=" << dataset.motion_id << "\n";
        meta << "verb=" << dataset.verb << "\n";
        meta << "fps=" << dataset.fps << "\n";
    }
    std::ofstream prompts(dir / "prompts.txt");
    for (std::size_t i = 0; i < dataset.clips.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%03d", static_cast<int>(i));
        save_clip_frames(dir / "clips" / name, dataset.clips[i]);
        prompts << name << "\t" << dataset.base_prompts[i] << "\n";
    }
}

std::vector<EvalPrompt> build_eval_prompts(const std::vector<std::string>& subjects,
                                           const std::vector<std::string>& contexts,
                                           const std::string& verb) {
    if (subjects.empty() || contexts.empty()) {
        throw ValidationError("build_eval_prompts: subjects and contexts must be non-empty");
    }
    std::vector<EvalPrompt> out;
    const std::size_t ns = subjects.size(), nc = contexts.size();
    for (int i = 0; i < 6; ++i) {
        EvalPrompt p;
        p.template_id = i + 1;
        p.subject = subjects[static_cast<std::size_t>(i) % ns];
        p.context = contexts[(static_cast<std::size_t>(i) / ns) % nc];
        p.prompt = "A " + p.subject + " is " + verb + " " + p.context;
        p.entity_prompt = "a " + p.subject;
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace vmt
