#include "vmt/manifest.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "vmt/archive.hpp"
#include "vmt/errors.hpp"

namespace vmt {

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

std::string RunManifest::config_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : config) {
        h = fnv1a_hash(k.data(), k.size(), h);
        h = fnv1a_hash("=", 1, h);
        h = fnv1a_hash(v.data(), v.size(), h);
        h = fnv1a_hash("\n", 1, h);
    }
    return hash_hex(h);
}

void RunManifest::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = config_hash();
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["checkpoint_hashes"] = checkpoint_hashes;
    j["seeds"] = seeds;
    j["wallclock_seconds"] = wallclock_seconds;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("manifest: cannot open " + path.string());
    os << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("manifest: cannot open " + path.string());
    nlohmann::json j = nlohmann::json::parse(is);
    RunManifest m;
    m.command = j.value("command", "");
    // Bind each sub-object before iterating: items() holds a reference and
    // must not outlive a temporary.
    auto read_map = [&j](const char* key, std::map<std::string, std::string>& out) {
        const nlohmann::json section = j.value(key, nlohmann::json::object());
        for (const auto& [k, v] : section.items()) out[k] = v.get<std::string>();
    };
    read_map("config", m.config);
    read_map("inputs", m.inputs);
    read_map("outputs", m.outputs);
    read_map("checkpoint_hashes", m.checkpoint_hashes);
    read_map("seeds", m.seeds);
    m.wallclock_seconds = j.value("wallclock_seconds", 0.0);
    return m;
}

}  // namespace vmt
