#pragma once

#include <cstdint>

namespace tpp {

/// SplitMix64-style finalizer; the basis of all deterministic randomness in
/// the project so results do not depend on standard-library distribution
/// internals.
std::uint64_t mix64(std::uint64_t x);

/// Order-free combination of a seed with up to four indices.
std::uint64_t mix_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                      std::uint64_t d = 0);

/// Sequential pseudo-random stream for parameter initialization.
class Pcg {
  public:
    explicit Pcg(std::uint64_t seed) : state_(mix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

    std::uint64_t next_u64();
    /// Uniform in (0, 1).
    double next_unit();
    /// Uniform in [lo, hi].
    double next_uniform(double lo, double hi);

  private:
    std::uint64_t state_;
};

/// Counter-based uniform noise indexed by (layer, head, point, slice).
/// The same seed yields a bit-identical stream for a given index tuple no
/// matter how points are partitioned across ranks or in what order samples
/// are drawn. Values are clamped to [1e-12, 1 - 1e-12].
class NoiseSource {
  public:
    explicit NoiseSource(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    double uniform(std::int64_t layer, std::int64_t head, std::int64_t point, std::int64_t slice) const;

  private:
    std::uint64_t seed_;
};

}  // namespace tpp
