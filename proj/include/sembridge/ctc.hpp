#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "sembridge/autodiff.hpp"
#include "sembridge/tensor.hpp"

namespace sembridge {

// CTC over logits of shape T x (V+1); the blank symbol is the last column.

template <typename T>
struct CtcResult {
  bool feasible = false;
  T loss = std::numeric_limits<T>::infinity();
  TensorT<T> grad_logits;  // empty when infeasible
};

inline int64_t ctc_min_frames(const std::vector<int64_t> &target) {
  int64_t n = static_cast<int64_t>(target.size());
  for (size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

namespace detail {
template <typename T>
T log_add(T a, T b) {
  if (a == -std::numeric_limits<T>::infinity()) return b;
  if (b == -std::numeric_limits<T>::infinity()) return a;
  T m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
}  // namespace detail

// Forward-backward. Returns -log P(target | logits) and the gradient with
// respect to the raw logits.
template <typename T>
CtcResult<T> ctc_loss(const TensorT<T> &logits, const std::vector<int64_t> &target) {
  const int64_t frames = logits.rows;
  const int64_t vocab_with_blank = logits.cols;
  const int64_t blank = vocab_with_blank - 1;
  const T neg_inf = -std::numeric_limits<T>::infinity();

  for (int64_t y : target)
    if (y < 0 || y >= blank) throw std::invalid_argument("ctc: target symbol out of range");
  if (ctc_min_frames(target) > frames) return CtcResult<T>{};  // infeasible

  // log-softmax per frame
  TensorT<T> lp(frames, vocab_with_blank);
  for (int64_t t = 0; t < frames; ++t) {
    T mx = logits.at(t, 0);
    for (int64_t k = 1; k < vocab_with_blank; ++k) mx = std::max(mx, logits.at(t, k));
    T z = 0;
    for (int64_t k = 0; k < vocab_with_blank; ++k) z += std::exp(logits.at(t, k) - mx);
    T lz = std::log(z) + mx;
    for (int64_t k = 0; k < vocab_with_blank; ++k) lp.at(t, k) = logits.at(t, k) - lz;
  }

  // extended target: blank, y1, blank, y2, ..., blank
  const int64_t ext = 2 * static_cast<int64_t>(target.size()) + 1;
  auto sym = [&](int64_t s) -> int64_t {
    return (s % 2 == 0) ? blank : target[static_cast<size_t>(s / 2)];
  };

  TensorT<T> alpha(frames, ext), beta(frames, ext);
  std::fill(alpha.data.begin(), alpha.data.end(), neg_inf);
  std::fill(beta.data.begin(), beta.data.end(), neg_inf);

  alpha.at(0, 0) = lp.at(0, blank);
  if (ext > 1) alpha.at(0, 1) = lp.at(0, sym(1));
  for (int64_t t = 1; t < frames; ++t) {
    for (int64_t s = 0; s < ext; ++s) {
      T a = alpha.at(t - 1, s);
      if (s >= 1) a = detail::log_add(a, alpha.at(t - 1, s - 1));
      if (s >= 2 && sym(s) != blank && sym(s) != sym(s - 2))
        a = detail::log_add(a, alpha.at(t - 1, s - 2));
      alpha.at(t, s) = (a == neg_inf) ? neg_inf : a + lp.at(t, sym(s));
    }
  }

  beta.at(frames - 1, ext - 1) = T(0);
  if (ext > 1) beta.at(frames - 1, ext - 2) = T(0);
  for (int64_t t = frames - 2; t >= 0; --t) {
    for (int64_t s = 0; s < ext; ++s) {
      T v = neg_inf;
      for (int64_t s2 = s; s2 <= std::min(ext - 1, s + 2); ++s2) {
        if (s2 == s + 2 && (sym(s2) == blank || sym(s2) == sym(s))) continue;
        v = detail::log_add(v, lp.at(t + 1, sym(s2)) + beta.at(t + 1, s2));
      }
      beta.at(t, s) = v;
    }
  }

  T log_p = detail::log_add(alpha.at(frames - 1, ext - 1),
                            ext > 1 ? alpha.at(frames - 1, ext - 2) : neg_inf);
  if (log_p == neg_inf) return CtcResult<T>{};

  CtcResult<T> res;
  res.feasible = true;
  res.loss = -log_p;
  res.grad_logits = TensorT<T>(frames, vocab_with_blank);
  for (int64_t t = 0; t < frames; ++t) {
    std::vector<T> occ(static_cast<size_t>(vocab_with_blank), neg_inf);
    for (int64_t s = 0; s < ext; ++s) {
      T q = alpha.at(t, s) + beta.at(t, s);
      if (q == neg_inf) continue;
      occ[static_cast<size_t>(sym(s))] = detail::log_add(occ[static_cast<size_t>(sym(s))], q);
    }
    for (int64_t k = 0; k < vocab_with_blank; ++k) {
      T post = (occ[static_cast<size_t>(k)] == neg_inf)
                   ? T(0)
                   : std::exp(occ[static_cast<size_t>(k)] - log_p);
      res.grad_logits.at(t, k) = std::exp(lp.at(t, k)) - post;
    }
  }
  return res;
}

// Tape wrapper. The gradient is exact first-order; it is injected as a
// constant, so CTC cannot sit inside a double-backward path (none of the
// training objectives need that).
template <typename T>
Var<T> ctc_loss_op(Tape<T> &t, Var<T> logits, const std::vector<int64_t> &target) {
  CtcResult<T> res = ctc_loss(logits.value(), target);
  if (!res.feasible) throw std::invalid_argument("ctc: infeasible target for sequence length");
  auto grad = std::make_shared<TensorT<T>>(std::move(res.grad_logits));
  return t.make(TensorT<T>::scalar(res.loss), {logits.id},
                [grad](Tape<T> &tp, int, Var<T> g) {
                  Var<T> gm = tp.broadcast_scalar(g, grad->rows, grad->cols);
                  return std::vector<Var<T>>{tp.mul(gm, tp.constant(*grad))};
                },
                "ctc_loss");
}

// Greedy decode: per-frame argmax, collapse repeats, drop blanks.
template <typename T>
std::vector<int64_t> ctc_greedy_decode(const TensorT<T> &logits) {
  const int64_t blank = logits.cols - 1;
  std::vector<int64_t> out;
  int64_t prev = -1;
  for (int64_t t = 0; t < logits.rows; ++t) {
    int64_t best = 0;
    for (int64_t k = 1; k < logits.cols; ++k)
      if (logits.at(t, k) > logits.at(t, best)) best = k;
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace sembridge
