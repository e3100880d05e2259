#pragma once

#include <array>
#include <cstdint>
#include <cmath>

namespace sspe {

// Counter-based generator (Philox4x32-10). Every stream is identified by a
// 64-bit key; drawing advances only a local counter, so streams derived from
// the same master seed are independent and any one of them can be
// reconstructed in isolation.
//
// Stream-splitting contract used throughout the library:
//   Rng root(master_seed);
//   Rng rep  = root.child(replicate_index);   // one per replicate
//   Rng step = rep.child(time_index);         // one per time step where needed
//   Rng part = step.child(particle_index);    // per-particle, order-free
// child() is cheap (two integer hash rounds) and never touches the parent's
// counter, so substreams may be consumed in any order or concurrently.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x7369'6d75'6c61'7465ull)) {}

  Rng child(std::uint64_t tag) const {
    Rng r(*this);
    r.key_ = mix64(key_ + 0x9E3779B97F4A7C15ull * (tag + 1));
    r.counter_ = 0;
    r.pos_ = 4;
    r.has_spare_ = false;
    return r;
  }

  std::uint64_t next_u64() {
    std::uint32_t lo = next_u32();
    std::uint32_t hi = next_u32();
    return (static_cast<std::uint64_t>(hi) << 32) | lo;
  }

  // Strictly inside (0,1): keeps log(u) and inverse-cdf lookups finite.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Marsaglia-Tsang; unit scale.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform01();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform01();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  // X ~ IG(shape, scale) i.e. 1/X ~ Gamma(shape, rate=scale).
  double inverse_gamma(double shape, double scale) { return scale / gamma(shape); }

  // N(mean, sd^2) restricted to [lo, hi].
  double truncated_normal(double mean, double sd, double lo, double hi);

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint32_t next_u32() {
    if (pos_ >= 4) {
      block_ = philox(key_, counter_++);
      pos_ = 0;
    }
    return block_[pos_++];
  }

  static std::array<std::uint32_t, 4> philox(std::uint64_t key, std::uint64_t counter) {
    std::uint32_t c0 = static_cast<std::uint32_t>(counter);
    std::uint32_t c1 = static_cast<std::uint32_t>(counter >> 32);
    std::uint32_t c2 = 0x243F6A88u;  // constant counter padding
    std::uint32_t c3 = 0x85A308D3u;
    std::uint32_t k0 = static_cast<std::uint32_t>(key);
    std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = 0xD2511F53ull * c0;
      std::uint64_t p1 = 0xCD9E8D57ull * c2;
      std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1 ^ k0;
      std::uint32_t n1 = static_cast<std::uint32_t>(p1);
      std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3 ^ k1;
      std::uint32_t n3 = static_cast<std::uint32_t>(p0);
      c0 = n0; c1 = n1; c2 = n2; c3 = n3;
      k0 += 0x9E3779B9u;
      k1 += 0xBB67AE85u;
    }
    return {c0, c1, c2, c3};
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sspe
