#include "sembridge/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sembridge/nn.hpp"
#include "sembridge/serialize.hpp"

namespace sembridge::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

bool LanguageSpec::operator==(const LanguageSpec &o) const {
  auto templates_eq = [&]() {
    if (intent_templates.size() != o.intent_templates.size()) return false;
    for (size_t i = 0; i < intent_templates.size(); ++i) {
      if (intent_templates[i].size() != o.intent_templates[i].size()) return false;
      for (size_t j = 0; j < intent_templates[i].size(); ++j) {
        const auto &a = intent_templates[i][j].tokens;
        const auto &b = o.intent_templates[i][j].tokens;
        if (a.size() != b.size()) return false;
        for (size_t k = 0; k < a.size(); ++k)
          if (a[k].kind != b[k].kind || a[k].slot_label != b[k].slot_label) return false;
      }
    }
    return true;
  };
  return seed == o.seed && k_phonemes == o.k_phonemes && k_subwords == o.k_subwords &&
         n_intents == o.n_intents && n_slots == o.n_slots && feature_dim == o.feature_dim &&
         dur_min == o.dur_min && dur_max == o.dur_max && lexicon == o.lexicon &&
         intent_markers == o.intent_markers && slot_words == o.slot_words &&
         plain_words == o.plain_words && prototypes.data == o.prototypes.data &&
         prototypes.rows == o.prototypes.rows && templates_eq();
}

std::string SlotTag::str() const {
  switch (kind) {
    case Kind::Outside: return "O";
    case Kind::Begin: return "B-" + std::to_string(label);
    case Kind::Inside: return "I-" + std::to_string(label);
  }
  return "O";
}

SlotTag SlotTag::parse(const std::string &s) {
  if (s == "O") return {};
  if (s.size() >= 3 && (s[0] == 'B' || s[0] == 'I') && s[1] == '-')
    return {s[0] == 'B' ? Kind::Begin : Kind::Inside, std::stoi(s.substr(2))};
  throw std::invalid_argument("bad slot tag: " + s);
}

const std::vector<Utterance> &CorpusBundle::split(const std::string &name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split: " + name);
}

namespace {

// Number of phoneme strings of length 1..4 with no adjacent repeats.
int64_t repeat_free_capacity(int64_t k) {
  int64_t total = 0, per_len = k;
  for (int len = 1; len <= 4; ++len) {
    total += per_len;
    per_len *= (k - 1);
  }
  return total;
}

bool is_prefix(const std::vector<int> &a, const std::vector<int> &b) {
  if (a.size() > b.size()) return false;
  return std::equal(a.begin(), a.end(), b.begin());
}

}  // namespace

LanguageSpec build_language(uint64_t seed, const LanguageSizes &sizes, int feature_dim,
                            int dur_min, int dur_max) {
  const int kp = sizes.k_phonemes, ks = sizes.k_subwords;
  if (kp < 2 || ks < 1 || sizes.n_intents < 1 || sizes.n_slots < 0)
    throw ConstructionError("build_language: degenerate sizes");
  if (dur_min < 1 || dur_max < dur_min)
    throw ConstructionError("build_language: bad duration range");
  if (repeat_free_capacity(kp) < ks)
    throw ConstructionError(
        "build_language: cannot construct " + std::to_string(ks) +
        " distinct lexicon entries of length <= 4 over " + std::to_string(kp) + " phonemes");

  LanguageSpec spec;
  spec.seed = seed;
  spec.k_phonemes = kp;
  spec.k_subwords = ks;
  spec.n_intents = sizes.n_intents;
  spec.n_slots = sizes.n_slots;
  spec.feature_dim = feature_dim;
  spec.dur_min = dur_min;
  spec.dur_max = dur_max;

  Rng rng(seed);

  // Prefix-free lexicon with no repeated adjacent phonemes inside an entry.
  // Prefix-freeness makes every subword concatenation uniquely parseable.
  // Phonemes are drawn with Zipf weights so the language has a skewed,
  // identifiable frequency profile like natural phoneme inventories.
  Rng lex_rng = rng.split(1);
  std::vector<double> zipf_cdf(static_cast<size_t>(kp));
  {
    double z = 0;
    for (int p = 0; p < kp; ++p) {
      z += 1.0 / static_cast<double>(p + 1);
      zipf_cdf[static_cast<size_t>(p)] = z;
    }
    for (auto &v : zipf_cdf) v /= z;
  }
  auto draw_phoneme = [&]() {
    double u = lex_rng.uniform();
    for (int p = 0; p < kp; ++p)
      if (u <= zipf_cdf[static_cast<size_t>(p)]) return p;
    return kp - 1;
  };
  spec.lexicon.clear();
  int64_t attempts = 0;
  const int64_t max_attempts = 20000LL * ks;
  while (static_cast<int>(spec.lexicon.size()) < ks) {
    if (++attempts > max_attempts)
      throw ConstructionError("build_language: lexicon sampling exhausted (sizes too tight)");
    double u = lex_rng.uniform();
    int len = u < 0.05 ? 1 : u < 0.50 ? 2 : u < 0.85 ? 3 : 4;
    std::vector<int> entry;
    for (int i = 0; i < len; ++i) {
      int p = draw_phoneme();
      while (!entry.empty() && p == entry.back()) p = draw_phoneme();
      entry.push_back(p);
    }
    bool ok = true;
    for (const auto &other : spec.lexicon)
      if (is_prefix(entry, other) || is_prefix(other, entry)) {
        ok = false;
        break;
      }
    if (ok) spec.lexicon.push_back(std::move(entry));
  }

  // Subword roles: ordered marker pairs per intent pair, small slot word
  // sets, everything else plain filler.
  std::vector<int> order(static_cast<size_t>(ks));
  for (int i = 0; i < ks; ++i) order[static_cast<size_t>(i)] = i;
  Rng shuffle_rng = rng.split(2);
  for (int i = ks - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);

  const int n_pairs = (sizes.n_intents + 1) / 2;
  const int n_marker_words = 2 * n_pairs;
  const int slot_set_size = 2;
  const int n_slot_words = sizes.n_slots * slot_set_size;
  if (n_marker_words + n_slot_words + 1 > ks)
    throw ConstructionError("build_language: not enough subwords for markers, slots and fillers");

  size_t cursor = 0;
  std::vector<std::pair<int, int>> pair_markers;
  for (int j = 0; j < n_pairs; ++j) {
    int a = order[cursor++], b = order[cursor++];
    pair_markers.emplace_back(a, b);
  }
  for (int s = 0; s < sizes.n_slots; ++s) {
    std::vector<int> words;
    for (int i = 0; i < slot_set_size; ++i) words.push_back(order[cursor++]);
    spec.slot_words.push_back(std::move(words));
  }
  for (; cursor < order.size(); ++cursor) spec.plain_words.push_back(order[cursor]);
  std::sort(spec.plain_words.begin(), spec.plain_words.end());

  // Paired intents share templates; only the marker order differs, so the
  // subword multiset distribution is identical inside a pair and bag-of-frame
  // pooling cannot tell them apart.
  using K = TemplateToken::Kind;
  auto tok = [](K k, int label = -1) { return TemplateToken{k, label}; };
  for (int intent = 0; intent < sizes.n_intents; ++intent) {
    int pair = intent / 2;
    auto [a, b] = pair_markers[static_cast<size_t>(pair)];
    spec.intent_markers.emplace_back(intent % 2 == 0 ? std::make_pair(a, b)
                                                     : std::make_pair(b, a));
    int slot_a = sizes.n_slots > 0 ? pair % sizes.n_slots : -1;
    int slot_b = sizes.n_slots > 0 ? (pair + 1) % sizes.n_slots : -1;
    auto slot_or_filler = [&](int label) {
      return label >= 0 ? tok(K::Slot, label) : tok(K::Filler);
    };
    std::vector<IntentTemplate> templates;
    templates.push_back({{tok(K::Marker1), tok(K::Filler), tok(K::Marker2), tok(K::Filler)}});
    templates.push_back({{tok(K::Filler), tok(K::Marker1), slot_or_filler(slot_a),
                          tok(K::Marker2), tok(K::Filler)}});
    templates.push_back({{tok(K::Marker1), tok(K::Filler), tok(K::Filler), tok(K::Marker2),
                          slot_or_filler(slot_b), tok(K::Filler)}});
    spec.intent_templates.push_back(std::move(templates));
  }

  // Phoneme prototypes: unit Gaussian rows; near-orthogonal at D=16.
  Rng proto_rng = rng.split(3);
  spec.prototypes = proto_rng.randn<float>(kp, feature_dim);
  double min_dist = 1e300;
  for (int i = 0; i < kp; ++i)
    for (int j = i + 1; j < kp; ++j) {
      double d = 0;
      for (int c = 0; c < feature_dim; ++c)
        d += std::pow(spec.prototypes.at(i, c) - spec.prototypes.at(j, c), 2);
      min_dist = std::min(min_dist, d);
    }
  if (kp > 1 && min_dist <= 1e-6)
    throw ConstructionError("build_language: degenerate prototypes (increase feature_dim)");

  return spec;
}

SynthesisResult synthesize_features(const std::vector<int> &phonemes, const LanguageSpec &spec,
                                    double noise_std, uint64_t seed) {
  if (phonemes.empty()) throw std::invalid_argument("synthesize_features: empty phoneme sequence");
  if (noise_std < 0) throw std::invalid_argument("synthesize_features: negative noise_std");
  for (int p : phonemes)
    if (p < 0 || p >= spec.k_phonemes)
      throw std::invalid_argument("synthesize_features: unknown phoneme id " + std::to_string(p));

  Rng rng(seed);
  std::vector<int> durations;
  int64_t total = 0;
  for (size_t i = 0; i < phonemes.size(); ++i) {
    int d = static_cast<int>(rng.uniform_int(spec.dur_min, spec.dur_max));
    durations.push_back(d);
    total += d;
  }

  SynthesisResult res;
  res.features.frames = TensorT<float>(total, spec.feature_dim);
  res.frame_alignment.reserve(static_cast<size_t>(total));
  int64_t row = 0;
  for (size_t i = 0; i < phonemes.size(); ++i) {
    for (int r = 0; r < durations[i]; ++r, ++row) {
      for (int c = 0; c < spec.feature_dim; ++c)
        res.features.frames.at(row, c) =
            spec.prototypes.at(phonemes[i], c) + static_cast<float>(rng.normal() * noise_std);
      res.frame_alignment.push_back(static_cast<int>(i));
    }
  }
  return res;
}

std::vector<int> expand_phonemes(const LanguageSpec &spec, const std::vector<int> &subwords) {
  std::vector<int> phonemes;
  for (int w : subwords) {
    if (w < 0 || w >= spec.k_subwords)
      throw std::invalid_argument("expand_phonemes: unknown subword id " + std::to_string(w));
    const auto &entry = spec.lexicon[static_cast<size_t>(w)];
    phonemes.insert(phonemes.end(), entry.begin(), entry.end());
  }
  return phonemes;
}

namespace {

// Adjacent equal phonemes across a subword boundary cannot be expressed by
// repeat-collapse decoding; the grammar simply avoids producing them.
bool collapse_safe(const LanguageSpec &spec, const std::vector<int> &subwords) {
  for (size_t i = 1; i < subwords.size(); ++i) {
    const auto &prev = spec.lexicon[static_cast<size_t>(subwords[i - 1])];
    const auto &next = spec.lexicon[static_cast<size_t>(subwords[i])];
    if (prev.back() == next.front()) return false;
  }
  return true;
}

}  // namespace

SentenceSample sample_sentence(const LanguageSpec &spec, int intent, Rng &rng) {
  if (intent < 0 || intent >= spec.n_intents)
    throw std::invalid_argument("sample_sentence: unknown intent");
  const auto &templates = spec.intent_templates[static_cast<size_t>(intent)];
  auto [m1, m2] = spec.intent_markers[static_cast<size_t>(intent)];

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const IntentTemplate &tpl = templates[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(templates.size()) - 1))];
    SentenceSample s;
    for (const TemplateToken &t : tpl.tokens) {
      switch (t.kind) {
        case TemplateToken::Kind::Marker1:
          s.subwords.push_back(m1);
          s.slots.push_back({});
          break;
        case TemplateToken::Kind::Marker2:
          s.subwords.push_back(m2);
          s.slots.push_back({});
          break;
        case TemplateToken::Kind::Filler: {
          int w = spec.plain_words[static_cast<size_t>(
              rng.uniform_int(0, static_cast<int64_t>(spec.plain_words.size()) - 1))];
          s.subwords.push_back(w);
          s.slots.push_back({});
          break;
        }
        case TemplateToken::Kind::Slot: {
          const auto &words = spec.slot_words[static_cast<size_t>(t.slot_label)];
          int n_words = rng.uniform() < 0.3 ? 2 : 1;
          for (int i = 0; i < n_words; ++i) {
            int w = words[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(words.size()) - 1))];
            s.subwords.push_back(w);
            s.slots.push_back({i == 0 ? SlotTag::Kind::Begin : SlotTag::Kind::Inside,
                               t.slot_label});
          }
          break;
        }
      }
    }
    if (collapse_safe(spec, s.subwords)) return s;
  }
  throw ConstructionError("sample_sentence: could not sample a collapse-safe sentence");
}

namespace {

Utterance make_utterance(const LanguageSpec &spec, int intent, double noise_std, Rng &rng) {
  SentenceSample s = sample_sentence(spec, intent, rng);
  Utterance u;
  u.subwords = s.subwords;
  u.slots = s.slots;
  u.intent = intent;
  u.phonemes = expand_phonemes(spec, u.subwords);
  SynthesisResult synth = synthesize_features(u.phonemes, spec, noise_std, rng.next_u64());
  u.features = std::move(synth.features);
  u.frame_alignment = std::move(synth.frame_alignment);
  return u;
}

Utterance make_question(const LanguageSpec &spec, int intent, double noise_std, Rng &rng) {
  auto [m1, m2] = spec.intent_markers[static_cast<size_t>(intent)];
  Utterance u;
  u.subwords = {m1, m2};
  if (!collapse_safe(spec, u.subwords)) u.subwords = {m1};  // degenerate marker pair
  u.phonemes = expand_phonemes(spec, u.subwords);
  SynthesisResult synth = synthesize_features(u.phonemes, spec, noise_std, rng.next_u64());
  u.features = std::move(synth.features);
  u.frame_alignment = std::move(synth.frame_alignment);
  return u;
}

// Concatenate utterances into a passage; alignment indices are shifted into
// the concatenated phoneme sequence.
Utterance concat_passage(const std::vector<Utterance> &parts) {
  Utterance out;
  int64_t total_frames = 0;
  for (const auto &p : parts) total_frames += p.features.frames.rows;
  const int64_t dim = parts.front().features.frames.cols;
  out.features.frames = TensorT<float>(total_frames, dim);
  int64_t row = 0;
  int phoneme_offset = 0;
  for (const auto &p : parts) {
    for (int64_t r = 0; r < p.features.frames.rows; ++r, ++row)
      for (int64_t c = 0; c < dim; ++c) out.features.frames.at(row, c) = p.features.frames.at(r, c);
    for (int a : p.frame_alignment) out.frame_alignment.push_back(a + phoneme_offset);
    out.phonemes.insert(out.phonemes.end(), p.phonemes.begin(), p.phonemes.end());
    out.subwords.insert(out.subwords.end(), p.subwords.begin(), p.subwords.end());
    out.slots.insert(out.slots.end(), p.slots.begin(), p.slots.end());
    phoneme_offset += static_cast<int>(p.phonemes.size());
  }
  return out;
}

void attach_qa(const LanguageSpec &spec, Utterance &answer, double noise_std, Rng &rng) {
  // Embed the answer utterance among 2..5 distractors whose ordered marker
  // pair differs from the answer's.
  auto answer_markers = spec.intent_markers[static_cast<size_t>(answer.intent)];
  int n_distractors = static_cast<int>(rng.uniform_int(2, 5));
  std::vector<Utterance> parts;
  int answer_pos = static_cast<int>(rng.uniform_int(0, n_distractors));
  for (int i = 0; i <= n_distractors; ++i) {
    if (i == answer_pos) {
      parts.push_back(answer);
      continue;
    }
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 200)
        throw ConstructionError("attach_qa: cannot sample distractor with distinct markers");
      int intent = static_cast<int>(rng.uniform_int(0, spec.n_intents - 1));
      if (spec.intent_markers[static_cast<size_t>(intent)] == answer_markers) continue;
      Utterance d = make_utterance(spec, intent, noise_std, rng);
      // passage-internal boundaries must stay collapse-safe too
      if (!parts.empty() && parts.back().phonemes.back() == d.phonemes.front()) continue;
      if (i + 1 == answer_pos && d.phonemes.back() == answer.phonemes.front()) continue;
      parts.push_back(std::move(d));
      break;
    }
  }

  int64_t begin = 0;
  for (int i = 0; i < answer_pos; ++i) begin += parts[static_cast<size_t>(i)].features.frames.rows;
  int64_t end = begin + answer.features.frames.rows;

  QaExample qa;
  qa.question = std::make_shared<Utterance>(make_question(spec, answer.intent, noise_std, rng));
  qa.passage = std::make_shared<Utterance>(concat_passage(parts));
  qa.answer_begin = begin;
  qa.answer_end = end;
  answer.qa = std::move(qa);
}

}  // namespace

CorpusBundle generate_corpus(const LanguageSpec &spec, const CorpusCounts &counts,
                             double noise_std) {
  if (counts.train < 1 || counts.dev < 1 || counts.test < 1 || counts.text_only < 1)
    throw std::invalid_argument("generate_corpus: counts must be >= 1");
  for (int c : {counts.train, counts.dev, counts.test})
    if (c < spec.n_intents)
      throw ConstructionError(
          "generate_corpus: split smaller than intent count; every intent must appear");

  CorpusBundle bundle;
  bundle.spec = spec;
  Rng master(spec.seed);

  auto fill_split = [&](std::vector<Utterance> &out, int count, uint64_t tag) {
    Rng rng = master.split(tag);
    for (int i = 0; i < count; ++i) {
      int intent = i < spec.n_intents ? i
                                      : static_cast<int>(rng.uniform_int(0, spec.n_intents - 1));
      out.push_back(make_utterance(spec, intent, noise_std, rng));
    }
    int n_qa = std::min(counts.sqa_per_split, count);
    for (int i = 0; i < n_qa; ++i)
      attach_qa(spec, out[static_cast<size_t>(count - 1 - i)], noise_std, rng);
  };
  fill_split(bundle.train, counts.train, 101);
  fill_split(bundle.dev, counts.dev, 102);
  fill_split(bundle.test, counts.test, 103);

  // Unpaired text: fresh sentences, never identical to a train transcript.
  std::set<std::vector<int>> train_sentences;
  for (const auto &u : bundle.train) train_sentences.insert(u.subwords);
  Rng text_rng = master.split(104);
  for (int i = 0; i < counts.text_only; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      int intent = static_cast<int>(text_rng.uniform_int(0, spec.n_intents - 1));
      SentenceSample s = sample_sentence(spec, intent, text_rng);
      if (train_sentences.count(s.subwords)) continue;
      bundle.unpaired_text.push_back(std::move(s.subwords));
      placed = true;
    }
    if (!placed)
      throw ConstructionError(
          "generate_corpus: grammar too small to draw text disjoint from train transcripts");
  }
  return bundle;
}

// ---- serialization -------------------------------------------------------

namespace {

json utt_core_to_json(const Utterance &u, int feat_record) {
  json j;
  j["feat"] = feat_record;
  j["phonemes"] = u.phonemes;
  j["subwords"] = u.subwords;
  j["frame_alignment"] = u.frame_alignment;
  if (u.intent >= 0) j["intent"] = u.intent;
  if (!u.slots.empty()) {
    std::vector<std::string> tags;
    for (const auto &t : u.slots) tags.push_back(t.str());
    j["slots"] = tags;
  }
  return j;
}

void utt_core_from_json(const json &j, Utterance &u,
                        const std::vector<TensorT<float>> &feats) {
  u.features.frames = feats.at(static_cast<size_t>(j.at("feat").get<int>()));
  u.phonemes = j.at("phonemes").get<std::vector<int>>();
  u.subwords = j.at("subwords").get<std::vector<int>>();
  u.frame_alignment = j.at("frame_alignment").get<std::vector<int>>();
  u.intent = j.value("intent", -1);
  if (j.contains("slots"))
    for (const auto &s : j.at("slots")) u.slots.push_back(SlotTag::parse(s.get<std::string>()));
}

json template_to_json(const IntentTemplate &t) {
  json arr = json::array();
  for (const auto &tok : t.tokens) {
    switch (tok.kind) {
      case TemplateToken::Kind::Marker1: arr.push_back("M1"); break;
      case TemplateToken::Kind::Marker2: arr.push_back("M2"); break;
      case TemplateToken::Kind::Filler: arr.push_back("F"); break;
      case TemplateToken::Kind::Slot: arr.push_back("S" + std::to_string(tok.slot_label)); break;
    }
  }
  return arr;
}

IntentTemplate template_from_json(const json &arr) {
  IntentTemplate t;
  for (const auto &item : arr) {
    std::string s = item.get<std::string>();
    if (s == "M1") t.tokens.push_back({TemplateToken::Kind::Marker1, -1});
    else if (s == "M2") t.tokens.push_back({TemplateToken::Kind::Marker2, -1});
    else if (s == "F") t.tokens.push_back({TemplateToken::Kind::Filler, -1});
    else if (s.size() > 1 && s[0] == 'S')
      t.tokens.push_back({TemplateToken::Kind::Slot, std::stoi(s.substr(1))});
    else throw std::runtime_error("bad template token: " + s);
  }
  return t;
}

}  // namespace

json spec_to_json(const LanguageSpec &spec) {
  json j;
  j["seed"] = spec.seed;
  j["k_phonemes"] = spec.k_phonemes;
  j["k_subwords"] = spec.k_subwords;
  j["n_intents"] = spec.n_intents;
  j["n_slots"] = spec.n_slots;
  j["feature_dim"] = spec.feature_dim;
  j["dur_min"] = spec.dur_min;
  j["dur_max"] = spec.dur_max;
  j["lexicon"] = spec.lexicon;
  json markers = json::array();
  for (auto [a, b] : spec.intent_markers) markers.push_back(json::array({a, b}));
  j["intent_markers"] = markers;
  json templates = json::array();
  for (const auto &per_intent : spec.intent_templates) {
    json arr = json::array();
    for (const auto &t : per_intent) arr.push_back(template_to_json(t));
    templates.push_back(arr);
  }
  j["intent_templates"] = templates;
  j["slot_words"] = spec.slot_words;
  j["plain_words"] = spec.plain_words;
  json protos = json::array();
  for (int64_t r = 0; r < spec.prototypes.rows; ++r) {
    json row = json::array();
    for (int64_t c = 0; c < spec.prototypes.cols; ++c) row.push_back(spec.prototypes.at(r, c));
    protos.push_back(row);
  }
  j["prototypes"] = protos;
  return j;
}

LanguageSpec spec_from_json(const json &j) {
  LanguageSpec spec;
  spec.seed = j.at("seed").get<uint64_t>();
  spec.k_phonemes = j.at("k_phonemes").get<int>();
  spec.k_subwords = j.at("k_subwords").get<int>();
  spec.n_intents = j.at("n_intents").get<int>();
  spec.n_slots = j.at("n_slots").get<int>();
  spec.feature_dim = j.at("feature_dim").get<int>();
  spec.dur_min = j.at("dur_min").get<int>();
  spec.dur_max = j.at("dur_max").get<int>();
  spec.lexicon = j.at("lexicon").get<std::vector<std::vector<int>>>();
  for (const auto &m : j.at("intent_markers"))
    spec.intent_markers.emplace_back(m.at(0).get<int>(), m.at(1).get<int>());
  for (const auto &per_intent : j.at("intent_templates")) {
    std::vector<IntentTemplate> ts;
    for (const auto &t : per_intent) ts.push_back(template_from_json(t));
    spec.intent_templates.push_back(std::move(ts));
  }
  spec.slot_words = j.at("slot_words").get<std::vector<std::vector<int>>>();
  spec.plain_words = j.at("plain_words").get<std::vector<int>>();
  const auto &protos = j.at("prototypes");
  spec.prototypes = TensorT<float>(static_cast<int64_t>(protos.size()), spec.feature_dim);
  for (size_t r = 0; r < protos.size(); ++r)
    for (int c = 0; c < spec.feature_dim; ++c)
      spec.prototypes.at(static_cast<int64_t>(r), c) = protos[r][static_cast<size_t>(c)].get<float>();
  return spec;
}

void save_corpus(const CorpusBundle &bundle, const std::string &dir) {
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "spec.json");
    if (!out) throw std::runtime_error("cannot write spec.json in " + dir);
    out << spec_to_json(bundle.spec).dump(2) << "\n";
  }

  std::ofstream labels(fs::path(dir) / "labels.jsonl");
  if (!labels) throw std::runtime_error("cannot write labels.jsonl in " + dir);

  for (const std::string name : {"train", "dev", "test"}) {
    const auto &utts = bundle.split(name);
    std::vector<const TensorT<float> *> feats;
    auto next_record = [&feats](const TensorT<float> &t) {
      feats.push_back(&t);
      return static_cast<int>(feats.size()) - 1;
    };
    for (size_t i = 0; i < utts.size(); ++i) {
      const Utterance &u = utts[i];
      json j = utt_core_to_json(u, next_record(u.features.frames));
      j["split"] = name;
      j["index"] = i;
      if (u.qa.has_value()) {
        json qa;
        qa["question"] = utt_core_to_json(*u.qa->question, next_record(u.qa->question->features.frames));
        qa["passage"] = utt_core_to_json(*u.qa->passage, next_record(u.qa->passage->features.frames));
        qa["answer_span"] = json::array({u.qa->answer_begin, u.qa->answer_end});
        j["qa"] = qa;
      }
      labels << j.dump() << "\n";
    }
    write_tensor_file((fs::path(dir) / ("features_" + name + ".bin")).string(),
                      (fs::path(dir) / ("features_" + name + ".json")).string(), feats);
  }

  json text = json::array();
  for (const auto &s : bundle.unpaired_text) text.push_back(s);
  std::ofstream text_out(fs::path(dir) / "text.json");
  text_out << text.dump() << "\n";
}

CorpusBundle load_corpus(const std::string &dir) {
  CorpusBundle bundle;
  {
    std::ifstream in(fs::path(dir) / "spec.json");
    if (!in) throw std::runtime_error("cannot read spec.json in " + dir);
    bundle.spec = spec_from_json(json::parse(in));
  }

  std::map<std::string, std::vector<TensorT<float>>> feats;
  for (const std::string name : {"train", "dev", "test"})
    feats[name] = read_tensor_file((fs::path(dir) / ("features_" + name + ".bin")).string(),
                                   (fs::path(dir) / ("features_" + name + ".json")).string());

  std::ifstream labels(fs::path(dir) / "labels.jsonl");
  if (!labels) throw std::runtime_error("cannot read labels.jsonl in " + dir);
  std::string line;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    std::string split = j.at("split").get<std::string>();
    const auto &split_feats = feats.at(split);
    Utterance u;
    utt_core_from_json(j, u, split_feats);
    if (j.contains("qa")) {
      QaExample qa;
      qa.question = std::make_shared<Utterance>();
      qa.passage = std::make_shared<Utterance>();
      utt_core_from_json(j["qa"]["question"], *qa.question, split_feats);
      utt_core_from_json(j["qa"]["passage"], *qa.passage, split_feats);
      qa.answer_begin = j["qa"]["answer_span"][0].get<int64_t>();
      qa.answer_end = j["qa"]["answer_span"][1].get<int64_t>();
      u.qa = std::move(qa);
    }
    auto &target = split == "train" ? bundle.train : split == "dev" ? bundle.dev : bundle.test;
    target.push_back(std::move(u));
  }

  std::ifstream text_in(fs::path(dir) / "text.json");
  if (text_in) {
    json text = json::parse(text_in);
    for (const auto &s : text) bundle.unpaired_text.push_back(s.get<std::vector<int>>());
  }
  return bundle;
}

uint64_t corpus_content_hash(const CorpusBundle &bundle) {
  uint64_t h = 1469598103934665603ULL;
  std::string spec_str = spec_to_json(bundle.spec).dump();
  h = fnv1a(spec_str.data(), spec_str.size(), h);
  auto hash_utt = [&h](const Utterance &u) {
    h = fnv1a(u.features.frames.data.data(), u.features.frames.data.size() * sizeof(float), h);
    h = fnv1a(u.phonemes.data(), u.phonemes.size() * sizeof(int), h);
    h = fnv1a(u.subwords.data(), u.subwords.size() * sizeof(int), h);
    h = fnv1a(&u.intent, sizeof(u.intent), h);
  };
  for (const auto *split : {&bundle.train, &bundle.dev, &bundle.test})
    for (const auto &u : *split) {
      hash_utt(u);
      if (u.qa.has_value()) {
        hash_utt(*u.qa->question);
        hash_utt(*u.qa->passage);
        h = fnv1a(&u.qa->answer_begin, sizeof(int64_t), h);
        h = fnv1a(&u.qa->answer_end, sizeof(int64_t), h);
      }
    }
  for (const auto &s : bundle.unpaired_text) h = fnv1a(s.data(), s.size() * sizeof(int), h);
  return h;
}

}  // namespace sembridge::corpus
