#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace vmt {

/// Structured record emitted by every CLI run; carries enough to reproduce
/// the run exactly (effective config, seeds, checkpoint hashes).
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::map<std::string, std::string> inputs;             // role -> path
    std::map<std::string, std::string> outputs;            // role -> path
    std::map<std::string, std::string> checkpoint_hashes;  // role -> hex hash
    std::map<std::string, std::string> seeds;              // role -> value
    double wallclock_seconds = 0;

    /// FNV-1a over the canonical key=value listing of config.
    std::string config_hash() const;

    void save(const std::filesystem::path& path) const;  // single JSON record
    static RunManifest load(const std::filesystem::path& path);
};

std::string hash_hex(std::uint64_t h);

}  // namespace vmt
