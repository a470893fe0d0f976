#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sembridge/autodiff.hpp"
#include "sembridge/rng.hpp"
#include "sembridge/tensor.hpp"

namespace sembridge {

template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
  bool frozen = false;
};

// Binds parameters to leaf vars on one tape, one leaf per parameter per step.
// Frozen parameters are bound without requires_grad and therefore receive
// exact zero gradients.
template <typename T>
class BinderT {
 public:
  explicit BinderT(Tape<T> &tape) : tape_(&tape) {}

  Var<T> operator()(ParameterT<T> &p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var<T> v = tape_->leaf(p.value, !p.frozen);
    bound_.emplace(&p, v);
    return v;
  }

  Tape<T> &tape() { return *tape_; }

 private:
  Tape<T> *tape_;
  std::unordered_map<ParameterT<T> *, Var<T>> bound_;
};

// Gradient map for a scalar loss over an explicit parameter list. Frozen
// parameters get zero tensors (the freezing contract).
template <typename T>
std::map<std::string, TensorT<T>> grad_params(BinderT<T> &binder, Var<T> loss,
                                              const std::vector<ParameterT<T> *> &params) {
  std::vector<Var<T>> wrt;
  wrt.reserve(params.size());
  for (ParameterT<T> *p : params) wrt.push_back(binder(*p));
  std::vector<TensorT<T>> gs = binder.tape().gradients(loss, wrt);
  std::map<std::string, TensorT<T>> out;
  for (size_t i = 0; i < params.size(); ++i) out[params[i]->name] = std::move(gs[i]);
  return out;
}

template <typename T>
TensorT<T> glorot_init(Rng &rng, int64_t fan_in, int64_t fan_out, int64_t rows, int64_t cols) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.rand_uniform<T>(rows, cols, -limit, limit);
}

template <typename T>
struct LinearT {
  ParameterT<T> weight;  // in x out
  ParameterT<T> bias;    // 1 x out
  bool has_bias = true;

  LinearT() = default;
  LinearT(const std::string &name, int64_t in, int64_t out, Rng &rng, bool with_bias = true)
      : has_bias(with_bias) {
    weight = {name + ".weight", glorot_init<T>(rng, in, out, in, out), false};
    bias = {name + ".bias", TensorT<T>::zeros(1, out), false};
  }

  void zero_init() {
    std::fill(weight.value.data.begin(), weight.value.data.end(), T(0));
    std::fill(bias.value.data.begin(), bias.value.data.end(), T(0));
  }

  Var<T> forward(BinderT<T> &b, Var<T> x) {
    Tape<T> &t = b.tape();
    Var<T> y = t.matmul(x, b(weight));
    if (has_bias) y = t.add(y, t.repeat_rows(b(bias), y.value().rows));
    return y;
  }

  std::vector<ParameterT<T> *> params() {
    std::vector<ParameterT<T> *> ps{&weight};
    if (has_bias) ps.push_back(&bias);
    return ps;
  }
};

struct ConvSpec {
  int64_t width = 1;
  int64_t stride = 1;
  int64_t padding = 0;
};

inline int64_t conv_out_len(int64_t t, const ConvSpec &s) {
  return (t + 2 * s.padding - s.width) / s.stride + 1;
}

// 1-D convolution over the time axis, built as unfold + matmul so its
// backward stays differentiable.
template <typename T>
struct Conv1dT {
  ParameterT<T> kernel;  // (width*in) x out
  ParameterT<T> bias;    // 1 x out
  ConvSpec spec;
  int64_t in_channels = 0, out_channels = 0;
  bool has_bias = true;

  Conv1dT() = default;
  Conv1dT(const std::string &name, int64_t in, int64_t out, ConvSpec s, Rng &rng,
          bool with_bias = true)
      : spec(s), in_channels(in), out_channels(out), has_bias(with_bias) {
    kernel = {name + ".kernel", glorot_init<T>(rng, s.width * in, out, s.width * in, out), false};
    bias = {name + ".bias", TensorT<T>::zeros(1, out), false};
  }

  Var<T> forward(BinderT<T> &b, Var<T> x) {
    Tape<T> &t = b.tape();
    if (x.value().cols != in_channels)
      throw std::invalid_argument("conv1d: channel mismatch");
    Var<T> padded = (spec.padding > 0) ? t.pad_rows(x, spec.padding, spec.padding) : x;
    if (padded.value().rows < spec.width)
      throw std::invalid_argument("conv1d: input shorter than kernel width");
    Var<T> cols = t.unfold1d(padded, spec.width, spec.stride);
    Var<T> y = t.matmul(cols, b(kernel));
    if (has_bias) y = t.add(y, t.repeat_rows(b(bias), y.value().rows));
    return y;
  }

  std::vector<ParameterT<T> *> params() {
    std::vector<ParameterT<T> *> ps{&kernel};
    if (has_bias) ps.push_back(&bias);
    return ps;
  }
};

template <typename T>
struct LayerNormT {
  ParameterT<T> gain;  // 1 x dim
  ParameterT<T> bias;  // 1 x dim
  T eps = T(1e-5);

  LayerNormT() = default;
  LayerNormT(const std::string &name, int64_t dim) {
    gain = {name + ".gain", TensorT<T>::full(1, dim, T(1)), false};
    bias = {name + ".bias", TensorT<T>::zeros(1, dim), false};
  }

  Var<T> forward(BinderT<T> &b, Var<T> x) {
    Tape<T> &t = b.tape();
    int64_t c = x.value().cols;
    int64_t r = x.value().rows;
    Var<T> mu = t.smul(t.rowwise_sum(x), T(1) / static_cast<T>(c));
    Var<T> centered = t.sub(x, t.repeat_cols(mu, c));
    Var<T> var = t.smul(t.rowwise_sum(square(t, centered)), T(1) / static_cast<T>(c));
    Var<T> inv = t.pow_const(t.sadd(var, eps), T(-0.5));
    Var<T> normed = t.mul(centered, t.repeat_cols(inv, c));
    return t.add(t.mul(normed, t.repeat_rows(b(gain), r)), t.repeat_rows(b(bias), r));
  }

  std::vector<ParameterT<T> *> params() { return {&gain, &bias}; }
};

template <typename T>
struct EmbeddingT {
  ParameterT<T> table;  // vocab x dim

  EmbeddingT() = default;
  EmbeddingT(const std::string &name, int64_t vocab, int64_t dim, Rng &rng) {
    table = {name + ".table", rng.randn<T>(vocab, dim, 1.0 / std::sqrt(static_cast<double>(dim))),
             false};
  }

  Var<T> forward(BinderT<T> &b, const std::vector<int64_t> &ids) {
    return b.tape().gather_rows(b(table), ids);
  }

  std::vector<ParameterT<T> *> params() { return {&table}; }
};

// Multihead attention. Queries come from a Tq x Dq sequence, keys/values
// from a Tk x Dk sequence; output is Tq x model_dim. An optional additive
// mask (Tq x Tk, 0 or -inf-ish) is applied to the scores before softmax.
template <typename T>
struct MultiheadAttentionT {
  LinearT<T> wq, wk, wv, wo;
  int64_t heads = 1;
  int64_t model_dim = 0;

  MultiheadAttentionT() = default;
  MultiheadAttentionT(const std::string &name, int64_t query_dim, int64_t kv_dim,
                      int64_t model, int64_t n_heads, Rng &rng)
      : heads(n_heads), model_dim(model) {
    if (model % n_heads != 0)
      throw std::invalid_argument("attention: model dim not divisible by heads");
    wq = LinearT<T>(name + ".wq", query_dim, model, rng, false);
    wk = LinearT<T>(name + ".wk", kv_dim, model, rng, false);
    wv = LinearT<T>(name + ".wv", kv_dim, model, rng, false);
    wo = LinearT<T>(name + ".wo", model, model, rng, false);
  }

  Var<T> forward(BinderT<T> &b, Var<T> query_seq, Var<T> kv_seq,
                 const TensorT<T> *additive_mask = nullptr) {
    Tape<T> &t = b.tape();
    Var<T> q = wq.forward(b, query_seq);
    Var<T> k = wk.forward(b, kv_seq);
    Var<T> v = wv.forward(b, kv_seq);
    int64_t dh = model_dim / heads;
    T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    Var<T> out;
    for (int64_t h = 0; h < heads; ++h) {
      Var<T> qh = t.slice_cols(q, h * dh, (h + 1) * dh);
      Var<T> kh = t.slice_cols(k, h * dh, (h + 1) * dh);
      Var<T> vh = t.slice_cols(v, h * dh, (h + 1) * dh);
      Var<T> scores = t.smul(t.matmul(qh, t.transpose(kh)), scale);
      if (additive_mask != nullptr) scores = t.add(scores, t.constant(*additive_mask));
      Var<T> attn = t.softmax_rows(scores);
      Var<T> oh = t.matmul(attn, vh);
      out = (h == 0) ? oh : t.concat_cols(out, oh);
    }
    return wo.forward(b, out);
  }

  // Attention weights of one head, for tests and diagnostics.
  Var<T> head_weights(BinderT<T> &b, Var<T> query_seq, Var<T> kv_seq, int64_t h) {
    Tape<T> &t = b.tape();
    Var<T> q = wq.forward(b, query_seq);
    Var<T> k = wk.forward(b, kv_seq);
    int64_t dh = model_dim / heads;
    T scale = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    Var<T> qh = t.slice_cols(q, h * dh, (h + 1) * dh);
    Var<T> kh = t.slice_cols(k, h * dh, (h + 1) * dh);
    return t.softmax_rows(t.smul(t.matmul(qh, t.transpose(kh)), scale));
  }

  std::vector<ParameterT<T> *> params() {
    std::vector<ParameterT<T> *> ps;
    for (auto *m : {&wq, &wk, &wv, &wo})
      for (auto *p : m->params()) ps.push_back(p);
    return ps;
  }
};

// Simple Elman recurrence; returns the T x hidden state sequence.
template <typename T>
struct RnnT {
  LinearT<T> input_map;
  LinearT<T> hidden_map;
  int64_t hidden = 0;

  RnnT() = default;
  RnnT(const std::string &name, int64_t in, int64_t hidden_dim, Rng &rng) : hidden(hidden_dim) {
    input_map = LinearT<T>(name + ".in", in, hidden_dim, rng, true);
    hidden_map = LinearT<T>(name + ".rec", hidden_dim, hidden_dim, rng, false);
  }

  Var<T> forward(BinderT<T> &b, Var<T> x) {
    Tape<T> &t = b.tape();
    Var<T> pre = input_map.forward(b, x);  // T x H
    int64_t rows = pre.value().rows;
    Var<T> h = t.constant(TensorT<T>::zeros(1, hidden));
    Var<T> states;
    for (int64_t i = 0; i < rows; ++i) {
      Var<T> xi = t.slice_rows(pre, i, i + 1);
      h = t.tanh_v(t.add(xi, hidden_map.forward(b, h)));
      states = (i == 0) ? h : t.concat_rows(states, h);
    }
    return states;
  }

  std::vector<ParameterT<T> *> params() {
    std::vector<ParameterT<T> *> ps;
    for (auto *p : input_map.params()) ps.push_back(p);
    for (auto *p : hidden_map.params()) ps.push_back(p);
    return ps;
  }
};

// Sum of -log softmax(logits)[target] over rows. `reduce_mean` divides by the
// number of rows.
template <typename T>
Var<T> cross_entropy_rows(Tape<T> &t, Var<T> logits, const std::vector<int64_t> &targets,
                          bool reduce_mean = false) {
  const TensorT<T> &x = logits.value();
  if (static_cast<int64_t>(targets.size()) != x.rows)
    throw std::invalid_argument("cross_entropy: target count mismatch");
  TensorT<T> mask(x.rows, x.cols);
  for (int64_t i = 0; i < x.rows; ++i) {
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= x.cols)
      throw std::invalid_argument("cross_entropy: target out of range");
    mask.at(i, targets[static_cast<size_t>(i)]) = T(1);
  }
  Var<T> picked = t.mul(t.log_softmax_rows(logits), t.constant(mask));
  Var<T> loss = t.neg(t.sum_all(picked));
  if (reduce_mean) loss = t.smul(loss, T(1) / static_cast<T>(x.rows));
  return loss;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over an explicit parameter list. Frozen parameters are
// skipped entirely.
template <typename T>
class AdamT {
 public:
  AdamT(std::vector<ParameterT<T> *> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (ParameterT<T> *p : params_) {
      states_[p->name] = State{TensorT<T>::zeros(p->value.rows, p->value.cols),
                               TensorT<T>::zeros(p->value.rows, p->value.cols)};
    }
  }

  void step(const std::map<std::string, TensorT<T>> &grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (ParameterT<T> *p : params_) {
      if (p->frozen) continue;
      auto it = grads.find(p->name);
      if (it == grads.end()) continue;
      const TensorT<T> &g = it->second;
      if (!g.all_finite()) throw std::runtime_error("adam: non-finite gradient for " + p->name);
      State &s = states_[p->name];
      for (size_t i = 0; i < g.data.size(); ++i) {
        double gi = static_cast<double>(g.data[i]);
        double m = cfg_.beta1 * static_cast<double>(s.m.data[i]) + (1.0 - cfg_.beta1) * gi;
        double v = cfg_.beta2 * static_cast<double>(s.v.data[i]) + (1.0 - cfg_.beta2) * gi * gi;
        s.m.data[i] = static_cast<T>(m);
        s.v.data[i] = static_cast<T>(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        p->value.data[i] -= static_cast<T>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  int64_t step_count() const { return t_; }

 private:
  struct State {
    TensorT<T> m, v;
  };
  std::vector<ParameterT<T> *> params_;
  AdamConfig cfg_;
  std::map<std::string, State> states_;
  int64_t t_ = 0;
};

// Temporarily freeze a parameter set (alternating GAN phases, downstream
// freezing contracts). Restores the previous flags on destruction.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(const std::vector<ParameterT<T> *> &params) {
    for (ParameterT<T> *p : params) {
      saved_.emplace_back(p, p->frozen);
      p->frozen = true;
    }
  }
  ~FreezeGuard() {
    for (auto &[p, was] : saved_) p->frozen = was;
  }
  FreezeGuard(const FreezeGuard &) = delete;
  FreezeGuard &operator=(const FreezeGuard &) = delete;

 private:
  std::vector<std::pair<ParameterT<T> *, bool>> saved_;
};

// FNV-1a over the raw parameter bytes; used for freezing-contract checks and
// artifact manifests.
inline uint64_t fnv1a(const void *data, size_t len, uint64_t h = 1469598103934665603ULL) {
  const unsigned char *p = static_cast<const unsigned char *>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
uint64_t param_hash(const ParameterT<T> &p) {
  uint64_t h = fnv1a(p.name.data(), p.name.size());
  return fnv1a(p.value.data.data(), p.value.data.size() * sizeof(T), h);
}

}  // namespace sembridge
