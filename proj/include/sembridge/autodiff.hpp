#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sembridge/tensor.hpp"

namespace sembridge {

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; invalidated when the tape dies.
template <typename T>
struct Var {
  Tape<T> *tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const TensorT<T> &value() const { return tape->val(id); }
  int64_t rows() const { return value().rows; }
  int64_t cols() const { return value().cols; }
};

// Reverse-mode tape. Backward rules are themselves built out of tape
// operations, so gradients are differentiable again (needed by the
// gradient-penalty term, which backpropagates through an input gradient).
template <typename T>
class Tape {
 public:
  // Given (tape, node id, upstream grad), return one gradient Var per parent.
  // Entries may be invalid when a parent gets no contribution.
  using Vjp = std::function<std::vector<Var<T>>(Tape<T> &, int, Var<T>)>;

  struct Node {
    TensorT<T> value;
    std::vector<int> parents;
    bool requires_grad = false;
    Vjp vjp;
    const char *op = "";
  };

  std::vector<Node> nodes;

  Var<T> leaf(TensorT<T> v, bool requires_grad = false) {
    return make(std::move(v), {}, nullptr, requires_grad ? "param" : "const", requires_grad);
  }
  Var<T> constant(TensorT<T> v) { return leaf(std::move(v), false); }
  Var<T> constant_scalar(T v) { return constant(TensorT<T>::scalar(v)); }

  const TensorT<T> &val(int id) const { return nodes[static_cast<size_t>(id)].value; }

  Var<T> make(TensorT<T> value, std::vector<int> parents, Vjp vjp, const char *op,
              bool force_rg = false) {
    if (!value.all_finite())
      throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    Node n;
    n.value = std::move(value);
    n.requires_grad = force_rg;
    for (int p : parents)
      if (nodes[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    n.parents = std::move(parents);
    n.vjp = std::move(vjp);
    n.op = op;
    nodes.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes.size()) - 1};
  }

  size_t size() const { return nodes.size(); }

  // Gradients of a scalar output with respect to `wrt`, as tape Vars so they
  // can be differentiated again. Vars without a path get zero constants;
  // non-requires-grad Vars (frozen parameters) likewise get exact zeros.
  std::vector<Var<T>> grad_vars(Var<T> out, const std::vector<Var<T>> &wrt) {
    if (out.tape != this || out.id < 0) throw std::logic_error("grad: invalid output var");
    if (!val(out.id).is_scalar()) throw std::invalid_argument("grad: output must be scalar");

    const int out_id = out.id;
    std::vector<char> needed(static_cast<size_t>(out_id) + 1, 0);
    needed[static_cast<size_t>(out_id)] = 1;
    for (int id = out_id; id >= 0; --id) {
      if (!needed[static_cast<size_t>(id)]) continue;
      const Node &n = nodes[static_cast<size_t>(id)];
      if (!n.requires_grad) {
        needed[static_cast<size_t>(id)] = 0;  // constants stop the sweep
        continue;
      }
      for (int p : n.parents)
        if (nodes[static_cast<size_t>(p)].requires_grad) needed[static_cast<size_t>(p)] = 1;
    }

    std::vector<int> grad_of(static_cast<size_t>(out_id) + 1, -1);
    grad_of[static_cast<size_t>(out_id)] =
        constant(TensorT<T>::scalar(T(1))).id;

    for (int id = out_id; id >= 0; --id) {
      if (!needed[static_cast<size_t>(id)] || grad_of[static_cast<size_t>(id)] < 0) continue;
      // Copy what we need up front: vjp calls can reallocate `nodes`.
      Vjp vjp = nodes[static_cast<size_t>(id)].vjp;
      std::vector<int> parents = nodes[static_cast<size_t>(id)].parents;
      if (!vjp) continue;
      Var<T> g{this, grad_of[static_cast<size_t>(id)]};
      std::vector<Var<T>> contribs = vjp(*this, id, g);
      if (contribs.size() != parents.size())
        throw std::logic_error("vjp arity mismatch");
      for (size_t k = 0; k < parents.size(); ++k) {
        int p = parents[k];
        if (!contribs[k].valid()) continue;
        if (!nodes[static_cast<size_t>(p)].requires_grad) continue;
        int &slot = grad_of[static_cast<size_t>(p)];
        if (slot < 0) {
          slot = contribs[k].id;
        } else {
          slot = add(Var<T>{this, slot}, contribs[k]).id;
        }
      }
    }

    std::vector<Var<T>> result;
    result.reserve(wrt.size());
    for (const Var<T> &w : wrt) {
      if (w.tape != this) throw std::logic_error("grad: wrt from another tape");
      int g = (w.id <= out_id) ? grad_of[static_cast<size_t>(w.id)] : -1;
      if (g >= 0 && nodes[static_cast<size_t>(w.id)].requires_grad) {
        result.push_back(Var<T>{this, g});
      } else {
        const TensorT<T> &v = val(w.id);
        result.push_back(constant(TensorT<T>::zeros(v.rows, v.cols)));
      }
    }
    return result;
  }

  std::vector<TensorT<T>> gradients(Var<T> out, const std::vector<Var<T>> &wrt) {
    std::vector<TensorT<T>> gs;
    for (Var<T> g : grad_vars(out, wrt)) gs.push_back(g.value());
    return gs;
  }

  // ---- primitive ops -------------------------------------------------

  Var<T> add(Var<T> a, Var<T> b) {
    const TensorT<T> &x = val(a.id), &y = val(b.id);
    require(x.same_shape(y), "add", "shape mismatch");
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.data[i] + y.data[i];
    return make(std::move(out), {a.id, b.id},
                [](Tape<T> &, int, Var<T> g) { return std::vector<Var<T>>{g, g}; }, "add");
  }

  Var<T> sub(Var<T> a, Var<T> b) {
    const TensorT<T> &x = val(a.id), &y = val(b.id);
    require(x.same_shape(y), "sub", "shape mismatch");
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.data[i] - y.data[i];
    return make(std::move(out), {a.id, b.id},
                [](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{g, t.neg(g)};
                },
                "sub");
  }

  Var<T> neg(Var<T> a) { return smul(a, T(-1)); }

  Var<T> mul(Var<T> a, Var<T> b) {
    const TensorT<T> &x = val(a.id), &y = val(b.id);
    require(x.same_shape(y), "mul", "shape mismatch");
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.data[i] * y.data[i];
    return make(std::move(out), {a.id, b.id},
                [a, b](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.mul(g, b), t.mul(g, a)};
                },
                "mul");
  }

  Var<T> smul(Var<T> a, T c) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.data[i] * c;
    return make(std::move(out), {a.id},
                [c](Tape<T> &t, int, Var<T> g) { return std::vector<Var<T>>{t.smul(g, c)}; },
                "smul");
  }

  Var<T> sadd(Var<T> a, T c) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = x.data[i] + c;
    return make(std::move(out), {a.id},
                [](Tape<T> &, int, Var<T> g) { return std::vector<Var<T>>{g}; }, "sadd");
  }

  Var<T> matmul(Var<T> a, Var<T> b) {
    const TensorT<T> &x = val(a.id), &y = val(b.id);
    require(x.cols == y.rows, "matmul", "inner extents differ");
    TensorT<T> out(x.rows, y.cols);
    for (int64_t i = 0; i < x.rows; ++i)
      for (int64_t k = 0; k < x.cols; ++k) {
        T xv = x.at(i, k);
        if (xv == T(0)) continue;
        const T *yrow = &y.data[static_cast<size_t>(k * y.cols)];
        T *orow = &out.data[static_cast<size_t>(i * out.cols)];
        for (int64_t j = 0; j < y.cols; ++j) orow[j] += xv * yrow[j];
      }
    return make(std::move(out), {a.id, b.id},
                [a, b](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.matmul(g, t.transpose(b)),
                                             t.matmul(t.transpose(a), g)};
                },
                "matmul");
  }

  Var<T> transpose(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.cols, x.rows);
    for (int64_t i = 0; i < x.rows; ++i)
      for (int64_t j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
    return make(std::move(out), {a.id},
                [](Tape<T> &t, int, Var<T> g) { return std::vector<Var<T>>{t.transpose(g)}; },
                "transpose");
  }

  Var<T> slice_rows(Var<T> a, int64_t r0, int64_t r1) {
    const TensorT<T> &x = val(a.id);
    require(0 <= r0 && r0 <= r1 && r1 <= x.rows, "slice_rows", "range out of bounds");
    TensorT<T> out(r1 - r0, x.cols);
    std::copy(x.data.begin() + r0 * x.cols, x.data.begin() + r1 * x.cols, out.data.begin());
    int64_t total = x.rows;
    return make(std::move(out), {a.id},
                [r0, total](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.place_rows(g, r0, total)};
                },
                "slice_rows");
  }

  // Embed `a` into a zero matrix of `total` rows starting at row r0.
  Var<T> place_rows(Var<T> a, int64_t r0, int64_t total) {
    const TensorT<T> &x = val(a.id);
    require(r0 >= 0 && r0 + x.rows <= total, "place_rows", "range out of bounds");
    TensorT<T> out(total, x.cols);
    std::copy(x.data.begin(), x.data.end(), out.data.begin() + r0 * x.cols);
    int64_t r1 = r0 + x.rows;
    return make(std::move(out), {a.id},
                [r0, r1](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.slice_rows(g, r0, r1)};
                },
                "place_rows");
  }

  Var<T> slice_cols(Var<T> a, int64_t c0, int64_t c1) {
    const TensorT<T> &x = val(a.id);
    require(0 <= c0 && c0 <= c1 && c1 <= x.cols, "slice_cols", "range out of bounds");
    TensorT<T> out(x.rows, c1 - c0);
    for (int64_t i = 0; i < x.rows; ++i)
      for (int64_t j = c0; j < c1; ++j) out.at(i, j - c0) = x.at(i, j);
    int64_t total = x.cols;
    return make(std::move(out), {a.id},
                [c0, total](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.place_cols(g, c0, total)};
                },
                "slice_cols");
  }

  Var<T> place_cols(Var<T> a, int64_t c0, int64_t total) {
    const TensorT<T> &x = val(a.id);
    require(c0 >= 0 && c0 + x.cols <= total, "place_cols", "range out of bounds");
    TensorT<T> out(x.rows, total);
    for (int64_t i = 0; i < x.rows; ++i)
      for (int64_t j = 0; j < x.cols; ++j) out.at(i, c0 + j) = x.at(i, j);
    int64_t c1 = c0 + x.cols;
    return make(std::move(out), {a.id},
                [c0, c1](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.slice_cols(g, c0, c1)};
                },
                "place_cols");
  }

  Var<T> concat_rows(Var<T> a, Var<T> b) {
    const TensorT<T> &x = val(a.id), &y = val(b.id);
    require(x.cols == y.cols, "concat_rows", "column extents differ");
    TensorT<T> out(x.rows + y.rows, x.cols);
    std::copy(x.data.begin(), x.data.end(), out.data.begin());
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + x.numel());
    int64_t ra = x.rows, rb = y.rows;
    return make(std::move(out), {a.id, b.id},
                [ra, rb](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.slice_rows(g, 0, ra),
                                             t.slice_rows(g, ra, ra + rb)};
                },
                "concat_rows");
  }

  Var<T> concat_cols(Var<T> a, Var<T> b) {
    const TensorT<T> &x = val(a.id), &y = val(b.id);
    require(x.rows == y.rows, "concat_cols", "row extents differ");
    TensorT<T> out(x.rows, x.cols + y.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
      for (int64_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j);
      for (int64_t j = 0; j < y.cols; ++j) out.at(i, x.cols + j) = y.at(i, j);
    }
    int64_t ca = x.cols, cb = y.cols;
    return make(std::move(out), {a.id, b.id},
                [ca, cb](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.slice_cols(g, 0, ca),
                                             t.slice_cols(g, ca, ca + cb)};
                },
                "concat_cols");
  }

  Var<T> rowwise_sum(Var<T> a) {  // RxC -> Rx1
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, 1);
    for (int64_t i = 0; i < x.rows; ++i) {
      T s = 0;
      for (int64_t j = 0; j < x.cols; ++j) s += x.at(i, j);
      out.at(i, 0) = s;
    }
    int64_t c = x.cols;
    return make(std::move(out), {a.id},
                [c](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.repeat_cols(g, c)};
                },
                "rowwise_sum");
  }

  Var<T> colwise_sum(Var<T> a) {  // RxC -> 1xC
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(1, x.cols);
    for (int64_t i = 0; i < x.rows; ++i)
      for (int64_t j = 0; j < x.cols; ++j) out.at(0, j) += x.at(i, j);
    int64_t r = x.rows;
    return make(std::move(out), {a.id},
                [r](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.repeat_rows(g, r)};
                },
                "colwise_sum");
  }

  Var<T> repeat_cols(Var<T> a, int64_t c) {  // Rx1 -> RxC
    const TensorT<T> &x = val(a.id);
    require(x.cols == 1, "repeat_cols", "input must be a column");
    TensorT<T> out(x.rows, c);
    for (int64_t i = 0; i < x.rows; ++i)
      for (int64_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, 0);
    return make(std::move(out), {a.id},
                [](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.rowwise_sum(g)};
                },
                "repeat_cols");
  }

  Var<T> repeat_rows(Var<T> a, int64_t r) {  // 1xC -> RxC
    const TensorT<T> &x = val(a.id);
    require(x.rows == 1, "repeat_rows", "input must be a row");
    TensorT<T> out(r, x.cols);
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(0, j);
    return make(std::move(out), {a.id},
                [](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.colwise_sum(g)};
                },
                "repeat_rows");
  }

  Var<T> sum_all(Var<T> a) {  // RxC -> 1x1
    const TensorT<T> &x = val(a.id);
    T s = 0;
    for (T v : x.data) s += v;
    int64_t r = x.rows, c = x.cols;
    return make(TensorT<T>::scalar(s), {a.id},
                [r, c](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.broadcast_scalar(g, r, c)};
                },
                "sum_all");
  }

  Var<T> broadcast_scalar(Var<T> a, int64_t r, int64_t c) {  // 1x1 -> RxC
    const TensorT<T> &x = val(a.id);
    require(x.is_scalar(), "broadcast_scalar", "input must be scalar");
    return make(TensorT<T>::full(r, c, x.data[0]), {a.id},
                [](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.sum_all(g)};
                },
                "broadcast_scalar");
  }

  Var<T> pad_rows(Var<T> a, int64_t before, int64_t after) {
    const TensorT<T> &x = val(a.id);
    require(before >= 0 && after >= 0, "pad_rows", "negative padding");
    TensorT<T> out(x.rows + before + after, x.cols);
    std::copy(x.data.begin(), x.data.end(), out.data.begin() + before * x.cols);
    int64_t r0 = before, r1 = before + x.rows;
    return make(std::move(out), {a.id},
                [r0, r1](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.slice_rows(g, r0, r1)};
                },
                "pad_rows");
  }

  // im2col for 1-D convolution over rows: TxD -> T'x(width*D) with
  // T' = floor((T - width)/stride) + 1. Input is expected pre-padded.
  Var<T> unfold1d(Var<T> a, int64_t width, int64_t stride) {
    const TensorT<T> &x = val(a.id);
    require(width >= 1 && stride >= 1, "unfold1d", "width and stride must be >= 1");
    require(x.rows >= width, "unfold1d", "input shorter than kernel width");
    int64_t tprime = (x.rows - width) / stride + 1;
    TensorT<T> out(tprime, width * x.cols);
    for (int64_t t = 0; t < tprime; ++t)
      for (int64_t w = 0; w < width; ++w)
        for (int64_t d = 0; d < x.cols; ++d)
          out.at(t, w * x.cols + d) = x.at(t * stride + w, d);
    int64_t rows = x.rows, cols = x.cols;
    return make(std::move(out), {a.id},
                [width, stride, rows, cols](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.fold1d(g, rows, cols, width, stride)};
                },
                "unfold1d");
  }

  // Scatter-add adjoint of unfold1d: T'x(width*D) -> TxD.
  Var<T> fold1d(Var<T> a, int64_t out_rows, int64_t out_cols, int64_t width, int64_t stride) {
    const TensorT<T> &x = val(a.id);
    require(x.cols == width * out_cols, "fold1d", "column extent mismatch");
    TensorT<T> out(out_rows, out_cols);
    for (int64_t t = 0; t < x.rows; ++t)
      for (int64_t w = 0; w < width; ++w)
        for (int64_t d = 0; d < out_cols; ++d)
          out.at(t * stride + w, d) += x.at(t, w * out_cols + d);
    return make(std::move(out), {a.id},
                [width, stride](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.unfold1d(g, width, stride)};
                },
                "fold1d");
  }

  Var<T> gather_rows(Var<T> table, std::vector<int64_t> idx) {
    const TensorT<T> &x = val(table.id);
    TensorT<T> out(static_cast<int64_t>(idx.size()), x.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < x.rows, "gather_rows", "index out of range");
      for (int64_t j = 0; j < x.cols; ++j) out.at(static_cast<int64_t>(i), j) = x.at(idx[i], j);
    }
    int64_t vocab = x.rows;
    return make(std::move(out), {table.id},
                [idx, vocab](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.scatter_rows_add(g, idx, vocab)};
                },
                "gather_rows");
  }

  Var<T> scatter_rows_add(Var<T> a, std::vector<int64_t> idx, int64_t out_rows) {
    const TensorT<T> &x = val(a.id);
    require(static_cast<int64_t>(idx.size()) == x.rows, "scatter_rows_add", "index count mismatch");
    TensorT<T> out(out_rows, x.cols);
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t j = 0; j < x.cols; ++j) out.at(idx[i], j) += x.at(static_cast<int64_t>(i), j);
    return make(std::move(out), {a.id},
                [idx](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.gather_rows(g, idx)};
                },
                "scatter_rows_add");
  }

  Var<T> relu(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    TensorT<T> mask(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) {
      bool pos = x.data[i] > T(0);
      out.data[i] = pos ? x.data[i] : T(0);
      mask.data[i] = pos ? T(1) : T(0);
    }
    auto mask_p = std::make_shared<TensorT<T>>(std::move(mask));
    return make(std::move(out), {a.id},
                [mask_p](Tape<T> &t, int, Var<T> g) {
                  Var<T> m = t.constant(*mask_p);
                  return std::vector<Var<T>>{t.mul(g, m)};
                },
                "relu");
  }

  Var<T> clamp_v(Var<T> a, T lo, T hi) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    TensorT<T> mask(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) {
      bool inside = x.data[i] > lo && x.data[i] < hi;
      out.data[i] = std::clamp(x.data[i], lo, hi);
      mask.data[i] = inside ? T(1) : T(0);
    }
    auto mask_p = std::make_shared<TensorT<T>>(std::move(mask));
    return make(std::move(out), {a.id},
                [mask_p](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.mul(g, t.constant(*mask_p))};
                },
                "clamp");
  }

  Var<T> exp_v(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::exp(x.data[i]);
    return make(std::move(out), {a.id},
                [](Tape<T> &t, int self, Var<T> g) {
                  return std::vector<Var<T>>{t.mul(g, Var<T>{&t, self})};
                },
                "exp");
  }

  Var<T> log_v(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::log(x.data[i]);
    return make(std::move(out), {a.id},
                [a](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{t.mul(g, t.pow_const(a, T(-1)))};
                },
                "log");
  }

  Var<T> pow_const(Var<T> a, T p) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = std::pow(x.data[i], p);
    return make(std::move(out), {a.id},
                [a, p](Tape<T> &t, int, Var<T> g) {
                  return std::vector<Var<T>>{
                      t.smul(t.mul(g, t.pow_const(a, p - T(1))), p)};
                },
                "pow_const");
  }

  Var<T> sigmoid(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) {
      T v = x.data[i];
      out.data[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
    }
    return make(std::move(out), {a.id},
                [](Tape<T> &t, int self, Var<T> g) {
                  Var<T> y{&t, self};
                  Var<T> one_minus = t.sadd(t.neg(y), T(1));
                  return std::vector<Var<T>>{t.mul(g, t.mul(y, one_minus))};
                },
                "sigmoid");
  }

  Var<T> tanh_v(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::tanh(x.data[i]);
    return make(std::move(out), {a.id},
                [](Tape<T> &t, int self, Var<T> g) {
                  Var<T> y{&t, self};
                  return std::vector<Var<T>>{
                      t.mul(g, t.sadd(t.neg(t.mul(y, y)), T(1)))};
                },
                "tanh");
  }

  Var<T> softmax_rows(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
      T mx = x.at(i, 0);
      for (int64_t j = 1; j < x.cols; ++j) mx = std::max(mx, x.at(i, j));
      T z = 0;
      for (int64_t j = 0; j < x.cols; ++j) z += std::exp(x.at(i, j) - mx);
      for (int64_t j = 0; j < x.cols; ++j) out.at(i, j) = std::exp(x.at(i, j) - mx) / z;
    }
    int64_t c = x.cols;
    return make(std::move(out), {a.id},
                [c](Tape<T> &t, int self, Var<T> g) {
                  Var<T> y{&t, self};
                  Var<T> inner = t.repeat_cols(t.rowwise_sum(t.mul(g, y)), c);
                  return std::vector<Var<T>>{t.mul(y, t.sub(g, inner))};
                },
                "softmax_rows");
  }

  Var<T> log_softmax_rows(Var<T> a) {
    const TensorT<T> &x = val(a.id);
    TensorT<T> out(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
      T mx = x.at(i, 0);
      for (int64_t j = 1; j < x.cols; ++j) mx = std::max(mx, x.at(i, j));
      T z = 0;
      for (int64_t j = 0; j < x.cols; ++j) z += std::exp(x.at(i, j) - mx);
      T lz = std::log(z) + mx;
      for (int64_t j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) - lz;
    }
    int64_t c = x.cols;
    return make(std::move(out), {a.id},
                [c](Tape<T> &t, int self, Var<T> g) {
                  Var<T> y{&t, self};
                  Var<T> probs = t.exp_v(y);
                  Var<T> inner = t.repeat_cols(t.rowwise_sum(g), c);
                  return std::vector<Var<T>>{t.sub(g, t.mul(probs, inner))};
                },
                "log_softmax_rows");
  }

 private:
  static void require(bool ok, const char *op, const char *msg) {
    if (!ok) throw std::invalid_argument(std::string(op) + ": " + msg);
  }
};

// ---- composite helpers (differentiable through the primitives) ----------

template <typename T>
Var<T> mean_all(Tape<T> &t, Var<T> a) {
  int64_t n = a.value().numel();
  return t.smul(t.sum_all(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> square(Tape<T> &t, Var<T> a) {
  return t.mul(a, a);
}

// l2 norm of the whole tensor; eps keeps the sqrt differentiable at 0.
template <typename T>
Var<T> l2_norm(Tape<T> &t, Var<T> a, T eps = T(1e-12)) {
  return t.pow_const(t.sadd(t.sum_all(square(t, a)), eps), T(0.5));
}

}  // namespace sembridge
