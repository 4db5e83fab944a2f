#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "fg2e/math.hpp"

namespace fg2e {

// xoshiro256** seeded via splitmix64. Self-contained so that streams are
// bit-identical across platforms and the full state (4 words) serializes
// into checkpoints. Every draw consumes a fixed number of words, making the
// stream position a pure function of the call sequence.
struct Rng {
  std::array<uint64_t, 4> state{};

  Rng() : Rng(0) {}

  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  uint64_t next_u64() {
    uint64_t result = rotl(state[1] * 5, 7) * 9;
    uint64_t t = state[1] << 17;
    state[2] ^= state[0];
    state[3] ^= state[1];
    state[1] ^= state[2];
    state[0] ^= state[3];
    state[2] ^= t;
    state[3] = rotl(state[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; consumes exactly two words per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // Uniform index in {0, ..., n-1}.
  int uniform_index(int n) {
    int i = int(uniform() * double(n));
    return i < n ? i : n - 1;
  }
};

}  // namespace fg2e
