#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sembridge/rng.hpp"
#include "sembridge/tensor.hpp"

namespace sembridge::corpus {

// Synthetic phonetic language: a prefix-free lexicon mapping subwords to
// phoneme strings, plus an intent grammar whose paired intents differ only
// in marker-word order (so bag-of-frames pooling cannot separate them).

struct ConstructionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TemplateToken {
  enum class Kind { Marker1, Marker2, Filler, Slot };
  Kind kind = Kind::Filler;
  int slot_label = -1;
};

struct IntentTemplate {
  std::vector<TemplateToken> tokens;
};

struct LanguageSizes {
  int k_phonemes = 8;
  int k_subwords = 20;
  int n_intents = 4;
  int n_slots = 2;
};

struct LanguageSpec {
  uint64_t seed = 0;
  int k_phonemes = 0;
  int k_subwords = 0;
  int n_intents = 0;
  int n_slots = 0;
  int feature_dim = 16;
  int dur_min = 2;
  int dur_max = 5;
  std::vector<std::vector<int>> lexicon;                    // subword -> phoneme string
  std::vector<std::pair<int, int>> intent_markers;          // per intent: ordered marker pair
  std::vector<std::vector<IntentTemplate>> intent_templates;
  std::vector<std::vector<int>> slot_words;                 // slot label -> word set
  std::vector<int> plain_words;
  TensorT<float> prototypes;                                // k_phonemes x feature_dim

  bool operator==(const LanguageSpec &o) const;
};

struct AcousticSequence {
  TensorT<float> frames;   // T x D
  double frame_rate = 100.0;
};

// "O" / "B-<label>" / "I-<label>"
struct SlotTag {
  enum class Kind { Outside, Begin, Inside };
  Kind kind = Kind::Outside;
  int label = -1;

  std::string str() const;
  static SlotTag parse(const std::string &s);
  bool operator==(const SlotTag &o) const { return kind == o.kind && label == o.label; }
};

struct Utterance;

struct QaExample {
  std::shared_ptr<Utterance> question;
  std::shared_ptr<Utterance> passage;
  int64_t answer_begin = 0;  // frame span [begin, end) within the passage
  int64_t answer_end = 0;
};

struct Utterance {
  AcousticSequence features;
  std::vector<int> phonemes;
  std::vector<int> subwords;
  std::vector<int> frame_alignment;  // per frame: index into `phonemes`
  int intent = -1;
  std::vector<SlotTag> slots;        // per subword; empty when unlabeled
  std::optional<QaExample> qa;
};

struct CorpusCounts {
  int train = 200;
  int dev = 50;
  int test = 50;
  int text_only = 400;
  int sqa_per_split = 10;
};

struct CorpusBundle {
  std::vector<Utterance> train, dev, test;
  std::vector<std::vector<int>> unpaired_text;
  LanguageSpec spec;

  const std::vector<Utterance> &split(const std::string &name) const;
};

// Deterministic function of (seed, sizes). Throws ConstructionError when the
// sizes cannot support a prefix-free lexicon or the grammar partition.
LanguageSpec build_language(uint64_t seed, const LanguageSizes &sizes, int feature_dim = 16,
                            int dur_min = 2, int dur_max = 5);

struct SynthesisResult {
  AcousticSequence features;
  std::vector<int> frame_alignment;
};

// Each phoneme gets a duration drawn uniformly from [dur_min, dur_max] and
// emits its prototype row plus N(0, noise_std^2) jitter.
SynthesisResult synthesize_features(const std::vector<int> &phonemes, const LanguageSpec &spec,
                                    double noise_std, uint64_t seed);

std::vector<int> expand_phonemes(const LanguageSpec &spec, const std::vector<int> &subwords);

struct SentenceSample {
  std::vector<int> subwords;
  std::vector<SlotTag> slots;
};

SentenceSample sample_sentence(const LanguageSpec &spec, int intent, Rng &rng);

CorpusBundle generate_corpus(const LanguageSpec &spec, const CorpusCounts &counts,
                             double noise_std);

// Directory layout: spec.json, labels.jsonl, features_<split>.bin with a
// features_<split>.json shape manifest per split.
void save_corpus(const CorpusBundle &bundle, const std::string &dir);
CorpusBundle load_corpus(const std::string &dir);

uint64_t corpus_content_hash(const CorpusBundle &bundle);

}  // namespace sembridge::corpus
