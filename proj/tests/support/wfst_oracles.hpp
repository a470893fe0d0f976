#pragma once

#include <functional>
#include <set>
#include <vector>

#include "sembridge/wfst.hpp"

namespace testsupport {

using sembridge::PhonemeLattice;
using sembridge::wfst::Arc;
using sembridge::wfst::Transducer;

// Linear acceptor for an explicit symbol string (labels are symbol+1).
inline Transducer string_acceptor(const std::vector<int> &symbols, int alphabet) {
  Transducer t;
  t.input_alphabet = alphabet;
  t.output_alphabet = alphabet;
  int cur = t.add_state();
  t.start = cur;
  for (int s : symbols) {
    int next = t.add_state();
    t.add_arc(cur, next, s + 1, s + 1, 0.0);
    cur = next;
  }
  t.set_final(cur, 0.0);
  return t;
}

// Near-one-hot lattice: log prob 0 on the hot symbol, -1e4 elsewhere.
inline PhonemeLattice onehot_lattice(const std::vector<int> &seq, int kp) {
  PhonemeLattice lat;
  lat.log_probs = sembridge::TensorT<float>::full(static_cast<int64_t>(seq.size()), kp, -1e4f);
  for (size_t t = 0; t < seq.size(); ++t) {
    lat.log_probs.at(static_cast<int64_t>(t), seq[t]) = 0.0f;
    lat.stride_map.emplace_back(static_cast<int64_t>(t), static_cast<int64_t>(t) + 1);
  }
  return lat;
}

inline std::vector<int> collapse_repeats(const std::vector<int> &seq) {
  std::vector<int> out;
  for (int s : seq)
    if (out.empty() || out.back() != s) out.push_back(s);
  return out;
}

// All ways to parse `phonemes` as a concatenation of lexicon entries.
inline void enumerate_segmentations(const std::vector<std::vector<int>> &lexicon,
                                    const std::vector<int> &phonemes, size_t pos,
                                    std::vector<int> &current,
                                    std::vector<std::vector<int>> &out) {
  if (pos == phonemes.size()) {
    out.push_back(current);
    return;
  }
  for (size_t w = 0; w < lexicon.size(); ++w) {
    const auto &entry = lexicon[w];
    if (pos + entry.size() > phonemes.size()) continue;
    if (!std::equal(entry.begin(), entry.end(), phonemes.begin() + static_cast<long>(pos)))
      continue;
    current.push_back(static_cast<int>(w));
    enumerate_segmentations(lexicon, phonemes, pos + entry.size(), current, out);
    current.pop_back();
  }
}

inline bool segmentable(const std::vector<std::vector<int>> &lexicon,
                        const std::vector<int> &phonemes) {
  std::vector<int> cur;
  std::vector<std::vector<int>> parses;
  enumerate_segmentations(lexicon, phonemes, 0, cur, parses);
  return !parses.empty();
}

inline bool shortlex_less(const std::vector<int> &a, const std::vector<int> &b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

// Joint brute force over emission sequences x lexicon segmentations, with the
// same (weight, shortlex output) order as the decoder.
struct JointBest {
  bool found = false;
  double weight = 0.0;
  std::vector<int> subwords;
};

inline JointBest joint_bruteforce(const PhonemeLattice &lat,
                                  const std::vector<std::vector<int>> &lexicon) {
  const int64_t T = lat.steps();
  const int kp = static_cast<int>(lat.phonemes());
  JointBest best;
  std::vector<int> emis(static_cast<size_t>(T), 0);
  std::function<void(int64_t, double)> rec = [&](int64_t t, double acc) {
    if (t == T) {
      std::vector<int> collapsed = collapse_repeats(emis);
      std::vector<int> cur;
      std::vector<std::vector<int>> parses;
      enumerate_segmentations(lexicon, collapsed, 0, cur, parses);
      for (const auto &p : parses) {
        if (!best.found || acc < best.weight ||
            (acc == best.weight && shortlex_less(p, best.subwords))) {
          best.found = true;
          best.weight = acc;
          best.subwords = p;
        }
      }
      return;
    }
    for (int k = 0; k < kp; ++k) {
      emis[static_cast<size_t>(t)] = k;
      rec(t + 1, acc + -static_cast<double>(lat.log_probs.at(t, k)));
    }
  };
  rec(0, 0.0);
  return best;
}

// Enumerate (input string, output string, weight) over all paths with at most
// `max_arcs` arcs. Weights accumulate left to right like the decoder's.
struct PathTriple {
  std::vector<int> in, out;
  double weight;
};

inline void enumerate_paths(const Transducer &t, int max_arcs,
                            std::vector<PathTriple> &result) {
  std::vector<int> in, out;
  std::function<void(int, int, double)> rec = [&](int state, int depth, double acc) {
    if (t.is_final(state))
      result.push_back({in, out, acc + t.final_weight[static_cast<size_t>(state)]});
    if (depth == max_arcs) return;
    for (const Arc &a : t.states[static_cast<size_t>(state)]) {
      if (a.ilabel != 0) in.push_back(a.ilabel);
      if (a.olabel != 0) out.push_back(a.olabel);
      rec(a.dst, depth + 1, acc + a.weight);
      if (a.ilabel != 0) in.pop_back();
      if (a.olabel != 0) out.pop_back();
    }
  };
  rec(t.start, 0, 0.0);
}

inline std::set<std::pair<std::vector<int>, std::vector<int>>> pair_language(
    const Transducer &t, int max_arcs) {
  std::vector<PathTriple> paths;
  enumerate_paths(t, max_arcs, paths);
  std::set<std::pair<std::vector<int>, std::vector<int>>> lang;
  for (const auto &p : paths) lang.insert({p.in, p.out});
  return lang;
}

}  // namespace testsupport
