#pragma once

#include <cstdint>
#include <string_view>

namespace augda {

/// Deterministic random source.
///
/// Generator: xoshiro256** seeded through SplitMix64. Both are fully
/// specified integer algorithms, so a given seed yields the same stream on
/// every platform. Real-valued draws are built from the top 53 bits of a
/// 64-bit output; nothing here depends on <random> distributions, whose
/// output is implementation-defined.
///
/// Child streams: `child(key)` seeds a new generator with
/// splitmix64(seed ^ splitmix64(key + 1)). The result depends only on the
/// parent's seed and the key, never on how many draws the parent has made.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t draws() const { return counter_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi]; lo == hi returns lo.
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    /// Standard normal (Box-Muller, one value per two uniforms).
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    SeededRng child(std::uint64_t key) const;
    SeededRng child(std::string_view key) const;

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t x);
/// FNV-1a 64-bit hash, used for string keys and config hashes.
std::uint64_t fnv1a64(std::string_view text);

}  // namespace augda
