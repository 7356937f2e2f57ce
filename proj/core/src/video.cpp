#include "vmt/video.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "vmt/errors.hpp"

namespace vmt {

namespace {

std::uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Tensor VideoClip::frame(std::int64_t i) const {
    const std::int64_t hw3 = height() * width() * 3;
    Tensor out({height(), width(), 3});
    const double* src = frames.data() + i * hw3;
    std::copy(src, src + hw3, out.data());
    return out;
}

void VideoClip::validate() const {
    if (frames.rank() != 4 || frames.dim(3) != 3) {
        throw ValidationError("VideoClip: frames must be [f,H,W,3], got " + frames.shape_str());
    }
    if (frame_count() < 1) throw ValidationError("VideoClip: needs at least one frame");
    if (fps <= 0) throw ValidationError("VideoClip: fps must be positive");
    for (std::int64_t i = 0; i < frames.numel(); ++i) {
        const double v = frames[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            throw ValidationError("VideoClip: pixel value out of [0,1]: " + std::to_string(v));
        }
    }
}

void write_ppm(const std::filesystem::path& path, const Tensor& frame) {
    if (frame.rank() != 3 || frame.dim(2) != 3) {
        throw ValidationError("write_ppm: frame must be [H,W,3]");
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("write_ppm: cannot open " + path.string());
    os << "P6\n" << frame.dim(1) << " " << frame.dim(0) << "\n255\n";
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(frame.numel()));
    for (std::int64_t i = 0; i < frame.numel(); ++i) bytes[static_cast<std::size_t>(i)] = to_byte(frame[i]);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("write_ppm: write failed " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("read_ppm: cannot open " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P6") throw ValidationError("read_ppm: not a binary PPM: " + path.string());
    std::int64_t w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (maxval != 255 || w <= 0 || h <= 0) {
        throw ValidationError("read_ppm: unsupported header in " + path.string());
    }
    is.get();  // single whitespace after header
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w * h * 3));
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!is) throw Error("read_ppm: truncated file " + path.string());
    Tensor frame({h, w, 3});
    for (std::int64_t i = 0; i < frame.numel(); ++i) {
        frame[i] = static_cast<double>(bytes[static_cast<std::size_t>(i)]) / 255.0;
    }
    return frame;
}

void save_clip_frames(const std::filesystem::path& dir, const VideoClip& clip) {
    std::filesystem::create_directories(dir);
    for (std::int64_t i = 0; i < clip.frame_count(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.ppm", static_cast<int>(i));
        write_ppm(dir / name, clip.frame(i));
    }
}

VideoClip load_clip_frames(const std::filesystem::path& dir, double fps) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.path().extension() == ".ppm") files.push_back(e.path());
    }
    if (files.empty()) throw ValidationError("load_clip_frames: no .ppm frames in " + dir.string());
    std::sort(files.begin(), files.end());
    Tensor first = read_ppm(files[0]);
    const std::int64_t h = first.dim(0), w = first.dim(1);
    Tensor frames({static_cast<std::int64_t>(files.size()), h, w, 3});
    for (std::size_t i = 0; i < files.size(); ++i) {
        Tensor f = (i == 0) ? std::move(first) : read_ppm(files[i]);
        if (f.dim(0) != h || f.dim(1) != w) {
            throw ValidationError("load_clip_frames: mixed resolutions in " + dir.string());
        }
        std::copy(f.data(), f.data() + f.numel(), frames.data() + static_cast<std::int64_t>(i) * h * w * 3);
    }
    return VideoClip{std::move(frames), fps};
}

namespace {

// Minimal GIF89a writer with a fixed 6x7x6 RGB palette and LZW coding.
class BitWriter {
public:
    explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}
    void put(std::uint32_t code, int bits) {
        acc_ |= static_cast<std::uint64_t>(code) << nbits_;
        nbits_ += bits;
        while (nbits_ >= 8) {
            out_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
            acc_ >>= 8;
            nbits_ -= 8;
        }
    }
    void flush() {
        if (nbits_ > 0) out_.push_back(static_cast<std::uint8_t>(acc_ & 0xff));
        acc_ = 0;
        nbits_ = 0;
    }

private:
    std::vector<std::uint8_t>& out_;
    std::uint64_t acc_ = 0;
    int nbits_ = 0;
};

void lzw_encode(const std::vector<std::uint8_t>& pixels, int min_code_size,
                std::vector<std::uint8_t>& out) {
    const int clear = 1 << min_code_size;
    const int eoi = clear + 1;
    std::map<std::pair<int, int>, int> table;  // (prefix code, next byte) -> code
    int next_code = eoi + 1;
    int code_size = min_code_size + 1;
    BitWriter bw(out);
    bw.put(static_cast<std::uint32_t>(clear), code_size);
    int prefix = -1;
    for (std::uint8_t px : pixels) {
        if (prefix < 0) {
            prefix = px;
            continue;
        }
        auto it = table.find({prefix, px});
        if (it != table.end()) {
            prefix = it->second;
            continue;
        }
        bw.put(static_cast<std::uint32_t>(prefix), code_size);
        table[{prefix, px}] = next_code++;
        if (next_code == (1 << code_size) + 1 && code_size < 12) ++code_size;
        if (next_code >= 4095) {
            bw.put(static_cast<std::uint32_t>(clear), code_size);
            table.clear();
            next_code = eoi + 1;
            code_size = min_code_size + 1;
        }
        prefix = px;
    }
    if (prefix >= 0) bw.put(static_cast<std::uint32_t>(prefix), code_size);
    bw.put(static_cast<std::uint32_t>(eoi), code_size);
    bw.flush();
}

}  // namespace

void write_gif(const std::filesystem::path& path, const VideoClip& clip) {
    const int w = static_cast<int>(clip.width());
    const int h = static_cast<int>(clip.height());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("write_gif: cannot open " + path.string());

    auto put16 = [&os](int v) {
        os.put(static_cast<char>(v & 0xff));
        os.put(static_cast<char>((v >> 8) & 0xff));
    };

    os.write("GIF89a", 6);
    put16(w);
    put16(h);
    os.put(static_cast<char>(0xf7));  // global palette, 256 entries, 8-bit color
    os.put(0);                        // background index
    os.put(0);                        // aspect

    // 6x7x6 levels = 252 colors; remaining 4 entries duplicate black.
    for (int r = 0; r < 6; ++r)
        for (int g = 0; g < 7; ++g)
            for (int b = 0; b < 6; ++b) {
                os.put(static_cast<char>(r * 255 / 5));
                os.put(static_cast<char>(g * 255 / 6));
                os.put(static_cast<char>(b * 255 / 5));
            }
    for (int i = 252; i < 256; ++i) {
        os.put(0);
        os.put(0);
        os.put(0);
    }

    // Loop forever.
    os.put(0x21);
    os.put(static_cast<char>(0xff));
    os.put(11);
    os.write("NETSCAPE2.0", 11);
    os.put(3);
    os.put(1);
    put16(0);
    os.put(0);

    const int delay_cs = std::max(2, static_cast<int>(std::lround(100.0 / clip.fps)));
    for (std::int64_t f = 0; f < clip.frame_count(); ++f) {
        os.put(0x21);  // graphics control
        os.put(static_cast<char>(0xf9));
        os.put(4);
        os.put(0);
        put16(delay_cs);
        os.put(0);
        os.put(0);

        os.put(0x2c);  // image descriptor
        put16(0);
        put16(0);
        put16(w);
        put16(h);
        os.put(0);

        std::vector<std::uint8_t> indexed(static_cast<std::size_t>(w) * h);
        const double* px = clip.frames.data() + f * w * h * 3;
        for (std::size_t i = 0; i < indexed.size(); ++i) {
            const int r = static_cast<int>(std::lround(std::clamp(px[i * 3 + 0], 0.0, 1.0) * 5));
            const int g = static_cast<int>(std::lround(std::clamp(px[i * 3 + 1], 0.0, 1.0) * 6));
            const int b = static_cast<int>(std::lround(std::clamp(px[i * 3 + 2], 0.0, 1.0) * 5));
            indexed[i] = static_cast<std::uint8_t>(r * 42 + g * 6 + b);
        }
        std::vector<std::uint8_t> lzw;
        lzw_encode(indexed, 8, lzw);
        os.put(8);  // LZW min code size
        for (std::size_t off = 0; off < lzw.size(); off += 255) {
            const std::size_t n = std::min<std::size_t>(255, lzw.size() - off);
            os.put(static_cast<char>(n));
            os.write(reinterpret_cast<const char*>(lzw.data() + off),
                     static_cast<std::streamsize>(n));
        }
        os.put(0);
    }
    os.put(0x3b);  // trailer
    if (!os) throw Error("write_gif: write failed " + path.string());
}

}  // namespace vmt
