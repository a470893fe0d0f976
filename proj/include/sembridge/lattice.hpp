#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sembridge/tensor.hpp"

namespace sembridge {

// Generator output: per-step log distribution over the phoneme inventory,
// plus the input-frame span each step was computed from.
struct PhonemeLattice {
  TensorT<float> log_probs;                            // T' x K_p, rows log-sum-exp to 0
  std::vector<std::pair<int64_t, int64_t>> stride_map; // step -> [begin, end) input frames

  int64_t steps() const { return log_probs.rows; }
  int64_t phonemes() const { return log_probs.cols; }
};

// Per-step argmax with repeat collapse; the lattice's best uncomposed
// phoneme string.
inline std::vector<int> lattice_argmax_collapsed(const PhonemeLattice &lat) {
  std::vector<int> out;
  int prev = -1;
  for (int64_t t = 0; t < lat.log_probs.rows; ++t) {
    int best = 0;
    for (int64_t k = 1; k < lat.log_probs.cols; ++k)
      if (lat.log_probs.at(t, k) > lat.log_probs.at(t, best)) best = static_cast<int>(k);
    if (best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace sembridge
