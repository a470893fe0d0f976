#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sembridge/lattice.hpp"

namespace sembridge::wfst {

// Weighted finite-state transducer over the tropical semiring (min, +).
// Labels are 1-based; 0 is epsilon. Phoneme p maps to label p+1, subword s
// to label s+1.

constexpr int kEpsilon = 0;

struct Arc {
  int dst = 0;
  int ilabel = kEpsilon;
  int olabel = kEpsilon;
  double weight = 0.0;
};

struct Transducer {
  int start = 0;
  std::vector<std::vector<Arc>> states;   // adjacency by source state
  std::vector<double> final_weight;       // +inf when not final
  int input_alphabet = 0;                 // number of input symbols (labels 1..n); 0 = unspecified
  int output_alphabet = 0;

  int add_state();
  void add_arc(int src, int dst, int ilabel, int olabel, double weight);
  void set_final(int state, double weight);
  bool is_final(int state) const;
  int num_states() const { return static_cast<int>(states.size()); }
  size_t num_arcs() const;
};

struct NoPathError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Kleene closure over the lexicon entries: accepts every concatenation of
// entry phoneme strings and outputs the corresponding subword string. The
// subword label is emitted on the first phoneme arc of its entry. An
// optional silence phoneme can loop at the root without output.
Transducer compile_lexicon(const std::vector<std::vector<int>> &lexicon, int n_phonemes,
                           int silence_phoneme = -1, double silence_weight = 0.0);

enum class CollapseRule {
  MergeRepeats,  // consecutive identical emissions collapse (no blank)
  EmitAll,       // every step emits; no collapsing
};

// Linear chain over the lattice steps. Arc weight is -log p; under
// MergeRepeats a repeated emission produces epsilon output.
Transducer lattice_acceptor(const PhonemeLattice &lattice,
                            CollapseRule rule = CollapseRule::MergeRepeats);

// Epsilon-filter composition; requires a.output_alphabet == b.input_alphabet
// when both are declared.
Transducer compose(const Transducer &a, const Transducer &b);

struct PathResult {
  double weight = 0.0;
  std::vector<int> ilabels;  // epsilons removed
  std::vector<int> olabels;  // epsilons removed
  std::vector<Arc> arcs;     // the full arc sequence
};

// Minimal-weight accepting path. Ties broken by shorter output string, then
// lexicographically (stable under dynamic programming). Throws NoPathError
// when no accepting path exists.
PathResult shortest_path(const Transducer &t);

struct DecodeResult {
  std::vector<int> subwords;
  double path_weight = 0.0;
  std::vector<int> alignment;  // per lattice step: subword index
  std::vector<std::pair<int64_t, int64_t>> stride_map;
  bool no_path = false;
};

// Compose the lattice with the lexicon and extract the best subword string
// with its per-step alignment. A lattice with no accepting path yields a
// flagged empty result rather than an error, so callers can skip it.
DecodeResult decode(const PhonemeLattice &lattice, const Transducer &lexicon,
                    CollapseRule rule = CollapseRule::MergeRepeats);

// Text format: header line, one arc per line `src dst in out weight`,
// finals as `state weight`. Weights round-trip bit-exactly.
void save_transducer(const Transducer &t, const std::string &path);
Transducer load_transducer(const std::string &path);

}  // namespace sembridge::wfst
