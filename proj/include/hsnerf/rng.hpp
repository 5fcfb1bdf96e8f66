// Counter-based deterministic RNG.
//
// Every random decision in the toolkit is drawn from a stream keyed by
// (purpose, seed, iteration, item, ...) rather than from shared mutable
// engines. Results are therefore independent of thread count and of the
// order in which work items run, and checkpoint resume does not need to
// serialize generator state beyond the seeds themselves.
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace hsnerf::rng {

// SplitMix64 finalizer.
inline uint64_t mix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Folds an arbitrary tuple of integers into one stream key.
inline uint64_t key(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243F6A8885A308D3ull;
  for (uint64_t p : parts) h = mix(h ^ mix(p));
  return h;
}

class Stream {
 public:
  explicit Stream(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Lemire multiply-shift; deterministic and
  // unbiased enough for sampling indices.
  uint64_t next_below(uint64_t n) {
    return uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller (deterministic, two uniforms per value).
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

 private:
  uint64_t state_;
};

}  // namespace hsnerf::rng
