#pragma once

#include <functional>
#include <vector>

#include "sembridge/autodiff.hpp"
#include "sembridge/tensor.hpp"

namespace testsupport {

using sembridge::Tape;
using sembridge::TensorT;
using sembridge::Var;

// Central finite differences against the tape gradient, in 64-bit.
// `build` maps leaf vars (one per input tensor) to a scalar var.
// Error metric: |a - n| / max(1, |a|, |n|) per component.
struct GradCheckReport {
  double max_err = 0;
  bool ok(double tol = 1e-4) const { return max_err <= tol; }
};

inline GradCheckReport check_gradients(
    const std::function<Var<double>(Tape<double> &, std::vector<Var<double>> &)> &build,
    std::vector<TensorT<double>> inputs, double eps = 1e-5) {
  GradCheckReport rep;

  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (auto &in : inputs) leaves.push_back(tape.leaf(in, true));
  Var<double> out = build(tape, leaves);
  std::vector<TensorT<double>> analytic = tape.gradients(out, leaves);

  for (size_t i = 0; i < inputs.size(); ++i) {
    for (size_t j = 0; j < inputs[i].data.size(); ++j) {
      double orig = inputs[i].data[j];

      auto eval = [&](double v) {
        inputs[i].data[j] = v;
        Tape<double> t2;
        std::vector<Var<double>> l2;
        for (auto &in : inputs) l2.push_back(t2.leaf(in, true));
        return build(t2, l2).value().item();
      };
      double num = (eval(orig + eps) - eval(orig - eps)) / (2 * eps);
      inputs[i].data[j] = orig;

      double a = analytic[i].data[j];
      double denom = std::max({1.0, std::abs(a), std::abs(num)});
      rep.max_err = std::max(rep.max_err, std::abs(a - num) / denom);
    }
  }
  return rep;
}

}  // namespace testsupport
