#include "vmt/archive.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "vmt/errors.hpp"

namespace vmt {

namespace {

constexpr char kMagic[4] = {'V', 'M', 'T', 'A'};

class ByteSink {
public:
    virtual ~ByteSink() = default;
    virtual void write(const void* data, std::size_t len) = 0;
};

class StreamSink : public ByteSink {
public:
    explicit StreamSink(std::ostream& os) : os_(os) {}
    void write(const void* data, std::size_t len) override {
        os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    }

private:
    std::ostream& os_;
};

class HashSink : public ByteSink {
public:
    void write(const void* data, std::size_t len) override { h_ = fnv1a_hash(data, len, h_); }
    std::uint64_t hash() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

template <typename T>
void put_pod(ByteSink& sink, T v) {
    sink.write(&v, sizeof(T));
}

void put_str(ByteSink& sink, const std::string& s) {
    put_pod<std::uint32_t>(sink, static_cast<std::uint32_t>(s.size()));
    sink.write(s.data(), s.size());
}

template <typename T>
T get_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("archive: truncated file");
    return v;
}

std::string get_str(std::istream& is) {
    const auto len = get_pod<std::uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw Error("archive: truncated file");
    return s;
}

void serialize(const TensorArchive& a, ByteSink& sink, bool include_meta) {
    sink.write(kMagic, sizeof(kMagic));
    put_pod<std::uint32_t>(sink, TensorArchive::kFormatVersion);
    if (include_meta) {
        put_pod<std::uint32_t>(sink, static_cast<std::uint32_t>(a.meta.size()));
        for (const auto& [k, v] : a.meta) {
            put_str(sink, k);
            put_str(sink, v);
        }
    } else {
        put_pod<std::uint32_t>(sink, 0);
    }
    put_pod<std::uint64_t>(sink, a.tensors.size());
    for (const auto& [name, t] : a.tensors) {
        put_str(sink, name);
        put_pod<std::uint8_t>(sink, 0);  // dtype f64
        put_pod<std::uint32_t>(sink, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put_pod<std::int64_t>(sink, d);
        sink.write(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double));
    }
}

}  // namespace

std::uint64_t fnv1a_hash(const void* data, std::size_t len, std::uint64_t seed) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

const Tensor& TensorArchive::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("archive: missing tensor '" + name + "'");
    return it->second;
}

std::string TensorArchive::meta_at(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw ValidationError("archive: missing meta key '" + key + "'");
    return it->second;
}

std::string TensorArchive::meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("archive: cannot open for writing: " + path.string());
    StreamSink sink(os);
    serialize(*this, sink, true);
    os.flush();
    if (!os) throw Error("archive: write failed: " + path.string());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("archive: cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw ValidationError("archive: bad magic in " + path.string());
    }
    const auto version = get_pod<std::uint32_t>(is);
    if (version != kFormatVersion) {
        throw ValidationError("archive: unsupported format version " + std::to_string(version) +
                              " in " + path.string());
    }
    TensorArchive a;
    const auto meta_count = get_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string k = get_str(is);
        std::string v = get_str(is);
        a.meta.emplace(std::move(k), std::move(v));
    }
    const auto tensor_count = get_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < tensor_count; ++i) {
        std::string name = get_str(is);
        const auto dtype = get_pod<std::uint8_t>(is);
        if (dtype != 0) throw ValidationError("archive: unsupported dtype tag");
        const auto ndim = get_pod<std::uint32_t>(is);
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) d = get_pod<std::int64_t>(is);
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!is) throw Error("archive: truncated tensor data");
        a.tensors.emplace(std::move(name), std::move(t));
    }
    return a;
}

std::uint64_t TensorArchive::content_hash() const {
    HashSink sink;
    serialize(*this, sink, true);
    return sink.hash();
}

std::uint64_t TensorArchive::tensor_hash() const {
    HashSink sink;
    serialize(*this, sink, false);
    return sink.hash();
}

}  // namespace vmt
