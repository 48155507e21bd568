#ifndef DNSSV_RNG_HPP
#define DNSSV_RNG_HPP

#include <array>
#include <cstdint>
#include <stdexcept>

#include "dnssv/specfun.hpp"

namespace dnssv {

// Reproducible random stream: xoshiro256++ seeded through splitmix64 from a
// (seed, stream_id) pair.  Distinct stream ids give statistically independent
// sequences; the same pair reproduces the sequence bit-identically on every
// platform (no std::*_distribution involved anywhere downstream).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {
    std::uint64_t x = splitmix64(seed);
    x ^= splitmix64(stream_id * 0x9E3779B97F4A7C15ULL + 0xBF58476D1CE4E5B9ULL);
    for (auto& w : state_) {
      x = x + 0x9E3779B97F4A7C15ULL;
      w = splitmix64(x);
    }
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  RngStream spawn(std::uint64_t sub_stream) const {
    return RngStream(seed_, stream_id_ * 0x100000000ULL + sub_stream + 1);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on the open interval (0,1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return norm_ppf(uniform()); }

  double exponential() { return -std::log(uniform()); }

  // Gamma(shape, 1), Marsaglia-Tsang squeeze; shape may be non-integer.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::domain_error("gamma: shape must be > 0");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double chi_squared(double df) { return 2.0 * gamma(0.5 * df); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::array<std::uint64_t, 4> state_;
};

}  // namespace dnssv

#endif
