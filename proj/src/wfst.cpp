#include "sembridge/wfst.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace sembridge::wfst {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

int Transducer::add_state() {
  states.emplace_back();
  final_weight.push_back(kInf);
  return static_cast<int>(states.size()) - 1;
}

void Transducer::add_arc(int src, int dst, int ilabel, int olabel, double weight) {
  if (src < 0 || src >= num_states() || dst < 0 || dst >= num_states())
    throw std::invalid_argument("add_arc: state out of range");
  states[static_cast<size_t>(src)].push_back(Arc{dst, ilabel, olabel, weight});
}

void Transducer::set_final(int state, double weight) {
  if (state < 0 || state >= num_states()) throw std::invalid_argument("set_final: bad state");
  final_weight[static_cast<size_t>(state)] = weight;
}

bool Transducer::is_final(int state) const {
  return final_weight[static_cast<size_t>(state)] != kInf;
}

size_t Transducer::num_arcs() const {
  size_t n = 0;
  for (const auto &s : states) n += s.size();
  return n;
}

Transducer compile_lexicon(const std::vector<std::vector<int>> &lexicon, int n_phonemes,
                           int silence_phoneme, double silence_weight) {
  if (lexicon.empty()) throw std::invalid_argument("compile_lexicon: empty lexicon");
  Transducer t;
  t.input_alphabet = n_phonemes;
  t.output_alphabet = static_cast<int>(lexicon.size());
  int root = t.add_state();
  t.start = root;
  t.set_final(root, 0.0);
  for (size_t s = 0; s < lexicon.size(); ++s) {
    const auto &entry = lexicon[s];
    if (entry.empty()) throw std::invalid_argument("compile_lexicon: empty entry");
    for (int p : entry)
      if (p < 0 || p >= n_phonemes)
        throw std::invalid_argument("compile_lexicon: phoneme id out of range");
    int cur = root;
    for (size_t i = 0; i < entry.size(); ++i) {
      int next = (i + 1 == entry.size()) ? root : t.add_state();
      t.add_arc(cur, next, entry[i] + 1, i == 0 ? static_cast<int>(s) + 1 : kEpsilon, 0.0);
      cur = next;
    }
  }
  if (silence_phoneme >= 0)
    t.add_arc(root, root, silence_phoneme + 1, kEpsilon, silence_weight);
  return t;
}

Transducer lattice_acceptor(const PhonemeLattice &lattice, CollapseRule rule) {
  const int64_t steps = lattice.steps();
  const int64_t kp = lattice.phonemes();
  if (steps < 1 || kp < 1) throw std::invalid_argument("lattice_acceptor: empty lattice");

  Transducer t;
  t.input_alphabet = static_cast<int>(kp);
  t.output_alphabet = static_cast<int>(kp);
  int start = t.add_state();
  t.start = start;
  // state for (step, last emission) = 1 + (step-1)*kp + p
  for (int64_t step = 1; step <= steps; ++step)
    for (int64_t p = 0; p < kp; ++p) t.add_state();
  auto sid = [kp](int64_t step, int64_t p) { return static_cast<int>(1 + (step - 1) * kp + p); };

  for (int64_t p = 0; p < kp; ++p)
    t.add_arc(start, sid(1, p), static_cast<int>(p) + 1, static_cast<int>(p) + 1,
              -static_cast<double>(lattice.log_probs.at(0, p)));
  for (int64_t step = 1; step < steps; ++step)
    for (int64_t prev = 0; prev < kp; ++prev)
      for (int64_t p = 0; p < kp; ++p) {
        bool merge = (rule == CollapseRule::MergeRepeats && p == prev);
        t.add_arc(sid(step, prev), sid(step + 1, p), static_cast<int>(p) + 1,
                  merge ? kEpsilon : static_cast<int>(p) + 1,
                  -static_cast<double>(lattice.log_probs.at(step, p)));
      }
  for (int64_t p = 0; p < kp; ++p) t.set_final(sid(steps, p), 0.0);
  return t;
}

Transducer compose(const Transducer &a, const Transducer &b) {
  if (a.output_alphabet != 0 && b.input_alphabet != 0 && a.output_alphabet != b.input_alphabet)
    throw std::invalid_argument("compose: output/input alphabet mismatch");

  // epsilon-sequencing filter: 0 = free, 1 = A-side epsilons only,
  // 2 = B-side epsilons only
  struct Key {
    int qa, qb, f;
    bool operator<(const Key &o) const {
      return std::tie(qa, qb, f) < std::tie(o.qa, o.qb, o.f);
    }
  };

  Transducer out;
  out.input_alphabet = a.input_alphabet;
  out.output_alphabet = b.output_alphabet;

  std::map<Key, int> ids;
  std::deque<Key> queue;
  auto state_of = [&](const Key &k) {
    auto it = ids.find(k);
    if (it != ids.end()) return it->second;
    int id = out.add_state();
    ids.emplace(k, id);
    queue.push_back(k);
    if (a.is_final(k.qa) && b.is_final(k.qb))
      out.set_final(id, a.final_weight[static_cast<size_t>(k.qa)] +
                            b.final_weight[static_cast<size_t>(k.qb)]);
    return id;
  };

  Key start{a.start, b.start, 0};
  out.start = state_of(start);

  while (!queue.empty()) {
    Key k = queue.front();
    queue.pop_front();
    int src = ids.at(k);
    const auto &arcs_a = a.states[static_cast<size_t>(k.qa)];
    const auto &arcs_b = b.states[static_cast<size_t>(k.qb)];

    for (const Arc &aa : arcs_a) {
      if (aa.olabel == kEpsilon) {
        if (k.f != 2)
          out.add_arc(src, state_of({aa.dst, k.qb, 1}), aa.ilabel, kEpsilon, aa.weight);
        if (k.f == 0)
          for (const Arc &bb : arcs_b)
            if (bb.ilabel == kEpsilon)
              out.add_arc(src, state_of({aa.dst, bb.dst, 0}), aa.ilabel, bb.olabel,
                          aa.weight + bb.weight);
      } else {
        for (const Arc &bb : arcs_b)
          if (bb.ilabel == aa.olabel)
            out.add_arc(src, state_of({aa.dst, bb.dst, 0}), aa.ilabel, bb.olabel,
                        aa.weight + bb.weight);
      }
    }
    if (k.f != 1)
      for (const Arc &bb : arcs_b)
        if (bb.ilabel == kEpsilon)
          out.add_arc(src, state_of({k.qa, bb.dst, 2}), kEpsilon, bb.olabel, bb.weight);
  }
  return out;
}

namespace {

// shortlex: shorter first, then lexicographic; stable under concatenation on
// the right, which makes the per-state tie-break globally consistent.
bool shortlex_less(const std::vector<int> &a, const std::vector<int> &b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

struct Label {
  double dist = kInf;
  std::vector<int> out;  // epsilon-free output prefix
  int pred_state = -1;
  int pred_arc = -1;
  bool reached = false;
};

}  // namespace

PathResult shortest_path(const Transducer &t) {
  if (t.num_states() == 0) throw NoPathError("shortest_path: empty machine");

  std::vector<Label> labels(static_cast<size_t>(t.num_states()));
  labels[static_cast<size_t>(t.start)].dist = 0;
  labels[static_cast<size_t>(t.start)].reached = true;

  // label-correcting relaxation; terminates because cycles either cost > 0
  // or cannot improve (longer output loses the shortlex tie-break)
  std::deque<int> queue{t.start};
  std::vector<char> in_queue(static_cast<size_t>(t.num_states()), 0);
  in_queue[static_cast<size_t>(t.start)] = 1;
  while (!queue.empty()) {
    int s = queue.front();
    queue.pop_front();
    in_queue[static_cast<size_t>(s)] = 0;
    Label cur = labels[static_cast<size_t>(s)];
    const auto &arcs = t.states[static_cast<size_t>(s)];
    for (size_t ai = 0; ai < arcs.size(); ++ai) {
      const Arc &arc = arcs[ai];
      double nd = cur.dist + arc.weight;
      std::vector<int> nout = cur.out;
      if (arc.olabel != kEpsilon) nout.push_back(arc.olabel);
      Label &dst = labels[static_cast<size_t>(arc.dst)];
      bool better = !dst.reached || nd < dst.dist ||
                    (nd == dst.dist && shortlex_less(nout, dst.out));
      if (better) {
        dst.dist = nd;
        dst.out = std::move(nout);
        dst.pred_state = s;
        dst.pred_arc = static_cast<int>(ai);
        dst.reached = true;
        if (!in_queue[static_cast<size_t>(arc.dst)]) {
          queue.push_back(arc.dst);
          in_queue[static_cast<size_t>(arc.dst)] = 1;
        }
      }
    }
  }

  int best_final = -1;
  double best_w = kInf;
  std::vector<int> best_out;
  for (int s = 0; s < t.num_states(); ++s) {
    if (!t.is_final(s) || !labels[static_cast<size_t>(s)].reached) continue;
    double w = labels[static_cast<size_t>(s)].dist + t.final_weight[static_cast<size_t>(s)];
    const std::vector<int> &o = labels[static_cast<size_t>(s)].out;
    if (best_final < 0 || w < best_w || (w == best_w && shortlex_less(o, best_out))) {
      best_final = s;
      best_w = w;
      best_out = o;
    }
  }
  if (best_final < 0) throw NoPathError("shortest_path: no accepting path");

  PathResult res;
  res.weight = best_w;
  std::vector<Arc> rev;
  int s = best_final;
  while (s != t.start || labels[static_cast<size_t>(s)].pred_state >= 0) {
    const Label &lab = labels[static_cast<size_t>(s)];
    if (lab.pred_state < 0) break;
    rev.push_back(t.states[static_cast<size_t>(lab.pred_state)][static_cast<size_t>(lab.pred_arc)]);
    s = lab.pred_state;
  }
  std::reverse(rev.begin(), rev.end());
  res.arcs = std::move(rev);
  for (const Arc &arc : res.arcs) {
    if (arc.ilabel != kEpsilon) res.ilabels.push_back(arc.ilabel);
    if (arc.olabel != kEpsilon) res.olabels.push_back(arc.olabel);
  }
  return res;
}

DecodeResult decode(const PhonemeLattice &lattice, const Transducer &lexicon,
                    CollapseRule rule) {
  DecodeResult res;
  res.stride_map = lattice.stride_map;
  Transducer acceptor = lattice_acceptor(lattice, rule);
  Transducer composed = compose(acceptor, lexicon);
  PathResult path;
  try {
    path = shortest_path(composed);
  } catch (const NoPathError &) {
    res.no_path = true;
    res.path_weight = kInf;
    return res;
  }
  res.path_weight = path.weight;
  for (int o : path.olabels) res.subwords.push_back(o - 1);
  int current = -1;
  for (const Arc &arc : path.arcs) {
    if (arc.olabel != kEpsilon) ++current;
    if (arc.ilabel != kEpsilon) res.alignment.push_back(current);
  }
  if (static_cast<int64_t>(res.alignment.size()) != lattice.steps())
    throw std::logic_error("decode: alignment does not cover every lattice step");
  return res;
}

namespace {
std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}
}  // namespace

void save_transducer(const Transducer &t, const std::string &path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write transducer: " + path);
  out << "start " << t.start << " states " << t.num_states() << " in " << t.input_alphabet
      << " out " << t.output_alphabet << "\n";
  for (int s = 0; s < t.num_states(); ++s)
    for (const Arc &a : t.states[static_cast<size_t>(s)])
      out << s << " " << a.dst << " " << a.ilabel << " " << a.olabel << " "
          << fmt_double(a.weight) << "\n";
  for (int s = 0; s < t.num_states(); ++s)
    if (t.is_final(s)) out << s << " " << fmt_double(t.final_weight[static_cast<size_t>(s)]) << "\n";
}

Transducer load_transducer(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read transducer: " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("empty transducer file: " + path);
  Transducer t;
  int n_states = 0;
  {
    std::istringstream hs(header);
    std::string kw;
    hs >> kw >> t.start;
    if (kw != "start") throw std::runtime_error("bad transducer header: " + path);
    hs >> kw >> n_states >> kw >> t.input_alphabet >> kw >> t.output_alphabet;
  }
  for (int i = 0; i < n_states; ++i) t.add_state();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string s;
    while (ls >> s) tok.push_back(s);
    if (tok.size() == 5) {
      t.add_arc(std::stoi(tok[0]), std::stoi(tok[1]), std::stoi(tok[2]), std::stoi(tok[3]),
                std::stod(tok[4]));
    } else if (tok.size() == 2) {
      t.set_final(std::stoi(tok[0]), std::stod(tok[1]));
    } else {
      throw std::runtime_error("bad transducer line: " + line);
    }
  }
  return t;
}

}  // namespace sembridge::wfst
