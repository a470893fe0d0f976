#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sembridge {

// Dense row-major matrix. Everything in this project is rank <= 2; vectors
// are 1xC or Rx1, scalars are 1x1.
template <typename T>
struct TensorT {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<T> data;

  TensorT() = default;
  TensorT(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), T(0)) {
    if (r < 0 || c < 0) throw std::invalid_argument("tensor: negative extent");
  }
  TensorT(int64_t r, int64_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != r * c)
      throw std::invalid_argument("tensor: data length does not match extents");
  }

  static TensorT zeros(int64_t r, int64_t c) { return TensorT(r, c); }
  static TensorT full(int64_t r, int64_t c, T v) {
    TensorT t(r, c);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(T v) { return full(1, 1, v); }
  static TensorT eye(int64_t n) {
    TensorT t(n, n);
    for (int64_t i = 0; i < n; ++i) t.at(i, i) = T(1);
    return t;
  }

  int64_t numel() const { return rows * cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  bool same_shape(const TensorT &o) const { return rows == o.rows && cols == o.cols; }

  T &at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
  const T &at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }

  T item() const {
    if (!is_scalar()) throw std::logic_error("tensor: item() on non-scalar");
    return data[0];
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

using Tensor = TensorT<float>;

}  // namespace sembridge
