#pragma once

#include <cstdint>
#include <vector>

namespace actsteer {

/// Seedable, splittable, counter-based generator ("splitmix64-counter").
///
/// The stream is a pure function of (seed, counter), so identical seeds give
/// identical draw sequences on every conforming implementation:
///
///   GOLDEN  = 0x9e3779b97f4a7c15
///   mix(z) : z ^= z >> 30;  z *= 0xbf58476d1ce4e5b9;
///            z ^= z >> 27;  z *= 0x94d049bb133111eb;
///            z ^= z >> 31;  return z          (the splitmix64 finalizer)
///   draw k : mix(seed + (k + 1) * GOLDEN)     for k = 0, 1, 2, ...
///
/// Derived draws (all consume a fixed number of u64 draws, so streams stay
/// aligned across implementations):
///   uniform01()    one u64:   (u >> 11) * 2^-53, in [0, 1)
///   normal()       two u64:   sqrt(-2 ln u1) * cos(2 pi u2), u1 = 0 mapped
///                             to 2^-53 before the log
///   index(n)       one u64:   u % n (modulo; bias is negligible for n << 2^64)
///   shuffle        Fisher-Yates from the back, j = index(i + 1)
///
/// split(tag) derives an independent child stream:
///   child seed = mix(seed ^ mix((tag + 1) * GOLDEN))
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    double uniform01();
    double normal();
    /// Uniform in [lo, hi); consumes one u64.
    double uniform(double lo, double hi);
    /// Uniform index in [0, n); n must be > 0. Consumes one u64.
    std::size_t index(std::size_t n);

    /// Independent child stream; does not advance this stream.
    Rng split(std::uint64_t tag) const;

    /// In-place Fisher-Yates shuffle; consumes v.size()-1 u64 draws
    /// (none when v.size() < 2).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace actsteer
