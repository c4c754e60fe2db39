#pragma once

#include <cstdint>
#include <vector>

namespace unifl {

// Deterministic, platform-independent random streams.
//
// std::mt19937 is portable but the std distributions are not (their
// algorithms are implementation-defined), so every draw here is built
// directly on integer output. All experiment randomness must go through
// this class; results are then bit-reproducible across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Derive an independent stream from a list of key components, e.g.
  // {seed, client_id, round}. Mixing is splitmix64-style so nearby keys
  // give unrelated streams.
  static Rng keyed(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (std::uint64_t k : keys) {
      h ^= mix(k + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    }
    return Rng(h);
  }

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). Rejection-free multiply-shift would bias for
  // huge n; n here is always small, so 128-bit multiply is exact enough and
  // deterministic.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // In-place Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace unifl
