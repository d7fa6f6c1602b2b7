#include "tpp/rng.hpp"

#include <algorithm>

namespace tpp {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t mix_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c,
                      std::uint64_t d) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    h = mix64(h ^ c);
    h = mix64(h ^ d);
    return h;
}

std::uint64_t Pcg::next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix64(state_);
}

double Pcg::next_unit() {
    // 53 mantissa bits; +0.5 keeps the value strictly inside (0, 1).
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Pcg::next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

double NoiseSource::uniform(std::int64_t layer, std::int64_t head, std::int64_t point,
                            std::int64_t slice) const {
    const std::uint64_t h = mix_key(seed_, static_cast<std::uint64_t>(layer),
                                    static_cast<std::uint64_t>(head), static_cast<std::uint64_t>(point),
                                    static_cast<std::uint64_t>(slice));
    const double u = (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
    return std::clamp(u, 1e-12, 1.0 - 1e-12);
}

}  // namespace tpp
