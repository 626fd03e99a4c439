#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace skt::nn {

// Counter-based generator: draw i is a pure function of (seed, i), so streams
// are identical across platforms and standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_ ^ mix(counter_++ + 0x9E3779B97F4A7C15ULL)); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in the open interval (0, 1); safe for log().
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) {
      throw std::invalid_argument("Rng::below: empty range");
    }
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Standard Gumbel(0, 1) noise.
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  // Independent child stream (e.g. one per epoch) derived from this seed.
  Rng fork(std::uint64_t salt) const { return Rng(mix(seed_ + 0xA0761D6478BD642FULL * (salt + 1))); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace skt::nn
