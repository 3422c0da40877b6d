#include "augda/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace augda {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t z = seed;
    for (auto& s : s_) {
        z = splitmix64(z);
        s = z;
    }
}

std::uint64_t SeededRng::next_u64() {
    ++counter_;
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double SeededRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
    if (hi < lo) throw std::invalid_argument("SeededRng::uniform: inverted interval");
    if (lo == hi) return lo;
    const double v = lo + (hi - lo) * uniform();
    return v > hi ? hi : v;
}

std::uint64_t SeededRng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("SeededRng::below: n must be positive");
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t limit = (0 - n) % n;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= limit) return r % n;
    }
}

double SeededRng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

SeededRng SeededRng::child(std::uint64_t key) const {
    return SeededRng(splitmix64(seed_ ^ splitmix64(key + 1)));
}

SeededRng SeededRng::child(std::string_view key) const { return child(fnv1a64(key)); }

}  // namespace augda
