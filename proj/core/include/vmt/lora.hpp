#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vmt/backbone.hpp"
#include "vmt/tensor.hpp"

namespace vmt {

enum class AdapterKind { spatial, temporal };

std::string to_string(AdapterKind kind);
AdapterKind adapter_kind_from_string(const std::string& s);

/// One low-rank update: y = base + scale * up (down x).
/// down is [r, d_in] (small-variance Gaussian at creation), up is [d_out, r]
/// and zero-initialized so a fresh pair is an exact no-op.
struct LoraPair {
    Tensor down;
    Tensor up;
    int rank = 0;
    double alpha = 0.0;

    double scale() const { return alpha / static_cast<double>(rank); }
};

/// Placement of LoRA pairs over one kind of transformer block. Spatial sets
/// target spatial self-attention and FFN projections, temporal sets the
/// temporal counterparts; cross-attention is never adapted.
class AdapterSet {
public:
    static constexpr int kDefaultRank = 32;

    AdapterSet() = default;

    /// Creates one pair per eligible projection of the given kind.
    static AdapterSet attach(const Backbone& model, AdapterKind kind, int rank = kDefaultRank,
                             std::uint64_t seed = 0, double alpha = -1.0);

    /// Rebuilds a set from persisted parts.
    static AdapterSet assemble(AdapterKind kind, int rank, double alpha,
                               std::map<std::string, LoraPair> placement, bool trainable);

    AdapterKind kind() const { return kind_; }
    bool trainable() const { return trainable_; }
    void set_trainable(bool v) { trainable_ = v; }
    int rank() const { return rank_; }
    double scale() const { return alpha_ / static_cast<double>(rank_); }

    const std::map<std::string, LoraPair>& placement() const { return placement_; }
    std::map<std::string, LoraPair>& mutable_placement() { return placement_; }

    /// Binds all pairs into a graph; requires_grad follows trainable().
    LoraVarMap bind(Graph& g) const;

    std::uint64_t checksum() const;

    void save(const std::filesystem::path& path,
              const std::map<std::string, std::string>& extra_meta = {}) const;
    static AdapterSet load(const std::filesystem::path& path);

    /// Eligible projection paths of the given kind on this backbone.
    static std::vector<std::string> eligible_paths(const Backbone& model, AdapterKind kind);

private:
    AdapterKind kind_ = AdapterKind::spatial;
    bool trainable_ = true;
    int rank_ = kDefaultRank;
    double alpha_ = kDefaultRank;
    std::map<std::string, LoraPair> placement_;
};

/// base_out + scale * up (down x); x and base_out are [*, d_in] / [*, d_out].
Tensor adapted_projection(const Tensor& x, const Tensor& base_out, const LoraPair& lora);

/// Folds the low-rank products into a copy of the base weights:
/// W' = W + scale * up down. Sets must target existing layers with compatible
/// shapes; two sets of the same kind must not share a layer path.
ParamStore merge_adapters(const ParamStore& base, const std::vector<const AdapterSet*>& sets);

/// Subtracts the low-rank products, restoring base weights after a merge.
ParamStore unmerge_adapters(const ParamStore& merged, const std::vector<const AdapterSet*>& sets);

/// Validates a set of adapters against a backbone (existing layers, kind
/// placement rules, no duplicate (kind, path) across sets).
void validate_adapters(const Backbone& model, const std::vector<const AdapterSet*>& sets);

}  // namespace vmt
