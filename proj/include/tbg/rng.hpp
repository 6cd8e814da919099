#pragma once

#include <cmath>
#include <random>
#include <string_view>

#include "tbg/common.hpp"

namespace tbg {

// Deterministic RNG. mt19937_64 is fully specified by the standard, and all
// draws below are built from raw engine output only, so streams are
// bit-reproducible across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, n) without modulo bias.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw Error("RNG_RANGE", "uniform_index over empty range");
    const std::uint64_t rem = std::numeric_limits<std::uint64_t>::max() % n;
    const std::uint64_t bound = std::numeric_limits<std::uint64_t>::max() - rem;
    std::uint64_t r;
    do {
      r = eng_();
    } while (r > bound);
    return r % n;
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Derived independent stream for a named purpose.
  Rng fork(std::string_view tag) const {
    std::uint64_t h = fnv1a64(&seed_, sizeof(seed_));
    h = fnv1a64(tag, h);
    return Rng(h);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tbg
