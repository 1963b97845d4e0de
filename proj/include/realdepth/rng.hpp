#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace realdepth {

std::uint64_t splitmix64(std::uint64_t& state);

/// Stable 64-bit mix of a seed and a stream tag. Used to derive independent
/// sub-generators per pipeline stage and per-sample seeds from sample ids.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// xoshiro256** with splitmix64 seeding. All draws are integer-state based so
/// sequences are identical across platforms; normal() uses Box-Muller on top.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);
    /// Standard normal; one Box-Muller draw per call (no cached pair).
    double normal();

    /// Independent generator for a named sub-stream of this generator's seed.
    Rng fork(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
};

}  // namespace realdepth
