#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sembridge/tensor.hpp"

namespace sembridge {

// mt19937_64 with hand-rolled distributions so that streams are pinned to the
// seed and stable across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_mix_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(engine_() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

  // Derive an independent stream; mixes the parent seed with a stream tag.
  Rng split(uint64_t tag) const {
    uint64_t x = seed_mix_ ^ (tag + 0x9e3779b97f4a7c15ULL);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return Rng(x);
  }

  template <typename T>
  TensorT<T> randn(int64_t rows, int64_t cols, double scale = 1.0) {
    TensorT<T> t(rows, cols);
    for (auto &v : t.data) v = static_cast<T>(normal() * scale);
    return t;
  }

  template <typename T>
  TensorT<T> rand_uniform(int64_t rows, int64_t cols, double lo, double hi) {
    TensorT<T> t(rows, cols);
    for (auto &v : t.data) v = static_cast<T>(uniform(lo, hi));
    return t;
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_mix_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sembridge
