#include "vmt/lora.hpp"

#include <algorithm>
#include <set>

#include "vmt/archive.hpp"
#include "vmt/errors.hpp"
#include "vmt/rng.hpp"

namespace vmt {

namespace {

const char* kProjections[] = {".attn.wq", ".attn.wk", ".attn.wv",
                              ".attn.wo", ".ffn.w1",  ".ffn.w2"};

constexpr double kDownInitSigma = 0.01;

}  // namespace

std::string to_string(AdapterKind kind) {
    return kind == AdapterKind::spatial ? "spatial" : "temporal";
}

AdapterKind adapter_kind_from_string(const std::string& s) {
    if (s == "spatial") return AdapterKind::spatial;
    if (s == "temporal") return AdapterKind::temporal;
    throw ValidationError("unknown adapter kind: " + s);
}

std::vector<std::string> AdapterSet::eligible_paths(const Backbone& model, AdapterKind kind) {
    std::vector<std::string> out;
    const auto prefixes = kind == AdapterKind::spatial ? model.spatial_block_prefixes()
                                                       : model.temporal_block_prefixes();
    for (const auto& prefix : prefixes) {
        for (const char* proj : kProjections) out.push_back(prefix + proj);
    }
    return out;
}

AdapterSet AdapterSet::attach(const Backbone& model, AdapterKind kind, int rank,
                              std::uint64_t seed, double alpha) {
    if (rank < 1) throw ValidationError("attach: rank must be >= 1");
    AdapterSet set;
    set.kind_ = kind;
    set.rank_ = rank;
    set.alpha_ = alpha < 0 ? static_cast<double>(rank) : alpha;
    Rng root = Rng(seed).fork("lora." + to_string(kind));
    for (const auto& path : eligible_paths(model, kind)) {
        auto it = model.params().find(path + ".weight");
        if (it == model.params().end()) {
            throw ValidationError("attach: projection not found: " + path);
        }
        const Tensor& w = it->second;
        const std::int64_t d_out = w.dim(0), d_in = w.dim(1);
        if (rank > std::min(d_in, d_out)) {
            throw ValidationError("attach: rank " + std::to_string(rank) +
                                  " exceeds min dim of " + path);
        }
        LoraPair pair;
        pair.rank = rank;
        pair.alpha = set.alpha_;
        pair.down = root.fork(path).normal_tensor({rank, d_in}, kDownInitSigma);
        pair.up = Tensor::zeros({d_out, rank});
        set.placement_.emplace(path, std::move(pair));
    }
    return set;
}

AdapterSet AdapterSet::assemble(AdapterKind kind, int rank, double alpha,
                                std::map<std::string, LoraPair> placement, bool trainable) {
    AdapterSet set;
    set.kind_ = kind;
    set.rank_ = rank;
    set.alpha_ = alpha;
    set.placement_ = std::move(placement);
    set.trainable_ = trainable;
    return set;
}

LoraVarMap AdapterSet::bind(Graph& g) const {
    LoraVarMap map;
    map.scale = scale();
    for (const auto& [path, pair] : placement_) {
        map.pairs.emplace(path, std::make_pair(g.leaf(pair.down, trainable_),
                                               g.leaf(pair.up, trainable_)));
    }
    return map;
}

std::uint64_t AdapterSet::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [path, pair] : placement_) {
        h = fnv1a_hash(path.data(), path.size(), h);
        h = fnv1a_hash(pair.down.data(), static_cast<std::size_t>(pair.down.numel()) * sizeof(double), h);
        h = fnv1a_hash(pair.up.data(), static_cast<std::size_t>(pair.up.numel()) * sizeof(double), h);
    }
    return h;
}

void AdapterSet::save(const std::filesystem::path& path,
                      const std::map<std::string, std::string>& extra_meta) const {
    TensorArchive a;
    a.meta = extra_meta;
    a.meta["kind"] = "adapters";
    a.meta["adapter_kind"] = to_string(kind_);
    a.meta["rank"] = std::to_string(rank_);
    a.meta["alpha"] = std::to_string(alpha_);
    for (const auto& [p, pair] : placement_) {
        a.put(p + ".down", pair.down);
        a.put(p + ".up", pair.up);
    }
    a.save(path);
}

AdapterSet AdapterSet::load(const std::filesystem::path& path) {
    TensorArchive a = TensorArchive::load(path);
    if (a.meta_or("kind", "") != "adapters") {
        throw ValidationError("not an adapter archive: " + path.string());
    }
    AdapterSet set;
    set.kind_ = adapter_kind_from_string(a.meta_at("adapter_kind"));
    set.rank_ = std::stoi(a.meta_at("rank"));
    set.alpha_ = std::stod(a.meta_at("alpha"));
    set.trainable_ = false;
    for (const auto& [name, t] : a.tensors) {
        if (name.size() > 5 && name.compare(name.size() - 5, 5, ".down") == 0) {
            const std::string p = name.substr(0, name.size() - 5);
            LoraPair pair;
            pair.rank = set.rank_;
            pair.alpha = set.alpha_;
            pair.down = t;
            pair.up = a.get(p + ".up");
            set.placement_.emplace(p, std::move(pair));
        }
    }
    return set;
}

Tensor adapted_projection(const Tensor& x, const Tensor& base_out, const LoraPair& lora) {
    Tensor low = linear_nobias(linear_nobias(x, lora.down), lora.up);
    if (!low.same_shape(base_out)) {
        throw ShapeError("adapted_projection: base/adapter output mismatch");
    }
    Tensor out = base_out;
    out.add_scaled(low, lora.scale());
    return out;
}

namespace {

void check_no_duplicates(const std::vector<const AdapterSet*>& sets) {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto* s : sets) {
        for (const auto& [path, pair] : s->placement()) {
            (void)pair;
            if (!seen.emplace(to_string(s->kind()), path).second) {
                throw ValidationError("adapter already attached at " + path + " (kind " +
                                      to_string(s->kind()) + ")");
            }
        }
    }
}

}  // namespace

ParamStore merge_adapters(const ParamStore& base, const std::vector<const AdapterSet*>& sets) {
    check_no_duplicates(sets);
    ParamStore merged = base;
    for (const auto* s : sets) {
        for (const auto& [path, pair] : s->placement()) {
            auto it = merged.find(path + ".weight");
            if (it == merged.end()) {
                throw ValidationError("merge: adapter targets non-existent layer: " + path);
            }
            Tensor& w = it->second;
            if (w.dim(0) != pair.up.dim(0) || w.dim(1) != pair.down.dim(1)) {
                throw ShapeError("merge: shape conflict at " + path);
            }
            w.add_scaled(matmul(pair.up, pair.down), pair.scale());
        }
    }
    return merged;
}

ParamStore unmerge_adapters(const ParamStore& merged,
                            const std::vector<const AdapterSet*>& sets) {
    check_no_duplicates(sets);
    ParamStore base = merged;
    for (const auto* s : sets) {
        for (const auto& [path, pair] : s->placement()) {
            auto it = base.find(path + ".weight");
            if (it == base.end()) {
                throw ValidationError("unmerge: adapter targets non-existent layer: " + path);
            }
            it->second.add_scaled(matmul(pair.up, pair.down), -pair.scale());
        }
    }
    return base;
}

void validate_adapters(const Backbone& model, const std::vector<const AdapterSet*>& sets) {
    check_no_duplicates(sets);
    for (const auto* s : sets) {
        const auto eligible = AdapterSet::eligible_paths(model, s->kind());
        for (const auto& [path, pair] : s->placement()) {
            (void)pair;
            if (model.params().find(path + ".weight") == model.params().end()) {
                throw ValidationError("adapter targets non-existent layer: " + path);
            }
            if (std::find(eligible.begin(), eligible.end(), path) == eligible.end()) {
                throw ValidationError("adapter placement violates " + to_string(s->kind()) +
                                      " rules at " + path);
            }
        }
    }
}

}  // namespace vmt
