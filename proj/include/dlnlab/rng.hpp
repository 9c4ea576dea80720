#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dlnlab {

// Counter-based generator: draw c of stream (seed, tag) is mix(key + (c+1)*golden).
// Any position is reachable without replaying earlier draws.
class RngStream {
 public:
  enum Tag : std::uint64_t { Data = 0x64617461ULL, Batch = 0x62617463ULL, Aux = 0x61757821ULL };

  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t tag, std::uint64_t counter = 0)
      : seed_(seed), tag_(tag), key_(mix(seed ^ mix(tag))), counter_(counter) {}

  static RngStream data(std::uint64_t seed) { return {seed, Data}; }
  static RngStream batch(std::uint64_t seed) { return {seed, Batch}; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t tag() const { return tag_; }
  std::uint64_t counter() const { return counter_; }
  void seek(std::uint64_t c) { counter_ = c; }

  // Independent child stream, e.g. one per trial.
  RngStream split(std::uint64_t child) const { return {mix(key_ ^ mix(child + 0x9e37ULL)), tag_}; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, m) (Lemire).
  std::uint64_t below(std::uint64_t m) {
    std::uint64_t x = next_u64();
    __uint128_t p = static_cast<__uint128_t>(x) * m;
    std::uint64_t lo = static_cast<std::uint64_t>(p);
    if (lo < m) {
      const std::uint64_t t = (0 - m) % m;
      while (lo < t) {
        x = next_u64();
        p = static_cast<__uint128_t>(x) * m;
        lo = static_cast<std::uint64_t>(p);
      }
    }
    return static_cast<std::uint64_t>(p >> 64);
  }

  // Box-Muller, one variate per two uniforms (no cached spare, keeps the stream stateless).
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t tag_ = 0;
  std::uint64_t key_ = mix(0);
  std::uint64_t counter_ = 0;
};

}  // namespace dlnlab
