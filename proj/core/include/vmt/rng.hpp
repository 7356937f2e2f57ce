#pragma once

#include <cstdint>
#include <string>

#include "vmt/tensor.hpp"

namespace vmt {

/// Deterministic random source. xoshiro256** seeded through splitmix64, with an
/// explicit Box-Muller transform for normals, so streams are reproducible
/// bit-for-bit across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::int64_t uniform_int(std::int64_t n);
    bool bernoulli(double p);

    double normal();
    double normal(double mean, double sigma);

    Tensor normal_tensor(std::vector<std::int64_t> shape, double sigma = 1.0);
    Tensor uniform_tensor(std::vector<std::int64_t> shape, double lo = 0.0, double hi = 1.0);

    /// Derive an independent stream; the parent state is not consumed.
    Rng fork(std::uint64_t stream) const;
    Rng fork(const std::string& stream) const;

private:
    std::uint64_t s_[4];
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
    std::uint64_t seed_ = 0;
};

}  // namespace vmt
