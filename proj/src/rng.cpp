#include "actsteer/rng.hpp"

#include <cmath>

#include "actsteer/common.hpp"

namespace actsteer {
namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

}  // namespace

std::uint64_t Rng::next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * kGolden);
}

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 == 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw config_error("Rng::index: n must be > 0");
    return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
}

Rng Rng::split(std::uint64_t tag) const {
    return Rng(mix(seed_ ^ mix((tag + 1) * kGolden)));
}

}  // namespace actsteer
