#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "interlab/errors.hpp"

namespace interlab {

// splitmix64 step; used only for seed derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a master seed and a stream index.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master;
  std::uint64_t h = splitmix64(s);
  s = h ^ (stream * 0xff51afd7ed558ccdULL + 0x2545f4914f6cdd1dULL);
  return splitmix64(s);
}

// FNV-1a over a label, for naming streams in seed derivations.
inline std::uint64_t stream_id(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  return derive_seed(master, stream_id(label) + 0x9e3779b97f4a7c15ULL * index);
}

// Deterministic RNG. mt19937_64 output is pinned by the standard, but the
// standard *distributions* are implementation-defined, so every draw shape
// used here (bounded ints, [0,1) reals, normals, shuffles) is hand-rolled to
// keep corpora and trained models bit-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n). Rejection sampling, bias-free.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) fail(errc::range, "Rng::below requires n > 0");
    const std::uint64_t reject = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t x = gen_();
      if (x >= reject) return x % n;
    }
  }

  // Uniform integer in [lo, hi] inclusive.
  long long range_int(long long lo, long long hi) {
    if (lo > hi) fail(errc::range, "Rng::range_int requires lo <= hi");
    return lo + static_cast<long long>(
                    below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  // Uniform double in [0, 1), 53-bit resolution.
  double real01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; always consumes exactly two draws.
  double normal() {
    double u1 = 1.0 - real01();  // (0, 1], keeps log finite
    double u2 = real01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Fisher-Yates shuffle with the bias-free bounded draw.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace interlab
