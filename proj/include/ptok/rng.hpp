#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ptok/errors.hpp"

namespace ptok {

// splitmix64 step; used to derive independent stream seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic random source. mt19937_64 output is pinned by the standard;
// the draw helpers below avoid std::*_distribution, whose results are
// implementation-defined, so identical seeds give identical streams on any
// platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], both ends inclusive.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw ConfigError("uniform_int: empty range");
    uint64_t range = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    uint64_t reject_above = UINT64_MAX - UINT64_MAX % range;
    uint64_t draw;
    do {
      draw = next_u64();
    } while (draw >= reject_above);
    return lo + static_cast<int>(draw % range);
  }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Fisher-Yates; avoids std::shuffle, which may consume the engine
  // differently across standard libraries.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), order randomized.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw ConfigError("sample_without_replacement: k > n");
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = uniform_int(i, n - 1);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(k));
    return idx;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ptok
