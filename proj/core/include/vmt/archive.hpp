#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "vmt/tensor.hpp"

namespace vmt {

/// Versioned container of named tensors with string metadata. Entries are
/// stored in name order, so identical contents serialize to identical bytes.
///
/// On-disk layout (little-endian):
///   magic "VMTA", u32 format version,
///   u32 meta count, { u32 key_len, key, u32 val_len, val } ...,
///   u64 tensor count, { u32 name_len, name, u8 dtype (0 = f64),
///                       u32 ndim, i64 dims..., f64 data... } ...
class TensorArchive {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    std::map<std::string, std::string> meta;
    std::map<std::string, Tensor> tensors;

    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    void put(const std::string& name, Tensor t) { tensors[name] = std::move(t); }

    std::string meta_at(const std::string& key) const;
    std::string meta_or(const std::string& key, const std::string& fallback) const;

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);

    /// FNV-1a over the serialized bytes; stable identity for manifests and
    /// freeze checks.
    std::uint64_t content_hash() const;

    /// Hash over tensor payloads only (metadata excluded).
    std::uint64_t tensor_hash() const;
};

std::uint64_t fnv1a_hash(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace vmt
