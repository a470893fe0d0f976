#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sembridge/ctc.hpp"
#include "sembridge/rng.hpp"
#include "support/gradcheck.hpp"

using namespace sembridge;

namespace {

// Brute-force oracle: sum over all (V+1)^T label paths that collapse to the
// target after removing repeats and blanks.
double ctc_bruteforce(const TensorT<double> &logits, const std::vector<int64_t> &target) {
  const int64_t T = logits.rows, A = logits.cols, blank = A - 1;
  TensorT<double> lp(T, A);
  for (int64_t t = 0; t < T; ++t) {
    double mx = logits.at(t, 0);
    for (int64_t k = 1; k < A; ++k) mx = std::max(mx, logits.at(t, k));
    double z = 0;
    for (int64_t k = 0; k < A; ++k) z += std::exp(logits.at(t, k) - mx);
    for (int64_t k = 0; k < A; ++k) lp.at(t, k) = logits.at(t, k) - mx - std::log(z);
  }

  double total = 0;
  std::vector<int64_t> path(static_cast<size_t>(T), 0);
  std::function<void(int64_t, double)> rec = [&](int64_t t, double acc) {
    if (t == T) {
      std::vector<int64_t> collapsed;
      int64_t prev = -1;
      for (int64_t s : path) {
        if (s != prev && s != blank) collapsed.push_back(s);
        prev = s;
      }
      if (collapsed == target) total += std::exp(acc);
      return;
    }
    for (int64_t k = 0; k < A; ++k) {
      path[static_cast<size_t>(t)] = k;
      rec(t + 1, acc + lp.at(t, k));
    }
  };
  rec(0, 0.0);
  return -std::log(total);
}

}  // namespace

TEST_CASE("single frame forced path has zero loss") {
  TensorT<double> logits(1, 3);
  logits.at(0, 0) = 200.0;  // prob(a) ~= 1
  auto res = ctc_loss(logits, {0});
  REQUIRE(res.feasible);
  CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("target longer than available frames is infeasible") {
  TensorT<double> logits(2, 3);
  auto res = ctc_loss(logits, {0, 1, 0});
  CHECK_FALSE(res.feasible);

  // repeated symbols need a separating blank frame
  TensorT<double> l2(2, 3);
  CHECK_FALSE(ctc_loss(l2, {1, 1}).feasible);
  CHECK(ctc_loss(TensorT<double>(3, 3), {1, 1}).feasible);
}

TEST_CASE("DP equals brute-force path enumeration on all tiny instances") {
  // all instances with T <= 8 sampled over sizes, |target| <= 4, V <= 4
  Rng rng(99);
  int checked = 0;
  for (int64_t V : {2, 3, 4}) {
    for (int64_t T = 1; T <= 8; T += (V == 4 ? 3 : 2)) {
      for (int64_t L = 0; L <= 4 && L <= T; ++L) {
        std::vector<int64_t> target;
        for (int64_t i = 0; i < L; ++i) target.push_back(rng.uniform_int(0, V - 1));
        TensorT<double> logits = rng.randn<double>(T, V + 1);
        auto res = ctc_loss(logits, target);
        double ref = ctc_bruteforce(logits, target);
        if (!res.feasible) {
          CHECK(std::isinf(ref));
          continue;
        }
        CHECK(res.loss == doctest::Approx(ref).epsilon(1e-6));
        ++checked;
      }
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("ctc gradient matches finite differences") {
  for (uint64_t seed : {1UL, 2UL, 3UL}) {
    Rng rng(seed);
    TensorT<double> logits = rng.randn<double>(6, 4);
    std::vector<int64_t> target{0, 2, 1};

    auto res = ctc_loss(logits, target);
    REQUIRE(res.feasible);

    double eps = 1e-6, max_err = 0;
    for (size_t i = 0; i < logits.data.size(); ++i) {
      double orig = logits.data[i];
      logits.data[i] = orig + eps;
      double up = ctc_loss(logits, target).loss;
      logits.data[i] = orig - eps;
      double dn = ctc_loss(logits, target).loss;
      logits.data[i] = orig;
      double num = (up - dn) / (2 * eps);
      double a = res.grad_logits.data[i];
      max_err = std::max(max_err, std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)}));
    }
    CHECK(max_err <= 1e-4);
  }
}

TEST_CASE("ctc tape op backpropagates the stored gradient") {
  Rng rng(5);
  TensorT<double> logits = rng.randn<double>(5, 3);
  Tape<double> t;
  Var<double> l = t.leaf(logits, true);
  Var<double> loss = ctc_loss_op(t, l, {0, 1});
  auto g = t.gradients(loss, {l});
  auto direct = ctc_loss(logits, {0, 1});
  for (size_t i = 0; i < direct.grad_logits.data.size(); ++i)
    CHECK(g[0].data[i] == doctest::Approx(direct.grad_logits.data[i]).epsilon(1e-9));
}

TEST_CASE("greedy decode collapses repeats and removes blanks") {
  // sequence: a a blank a b -> a a b
  TensorT<double> logits(5, 3);
  auto set = [&](int64_t t, int64_t k) { logits.at(t, k) = 10.0; };
  set(0, 0);
  set(1, 0);
  set(2, 2);  // blank
  set(3, 0);
  set(4, 1);
  auto out = ctc_greedy_decode(logits);
  REQUIRE(out.size() == 3);
  CHECK(out[0] == 0);
  CHECK(out[1] == 0);
  CHECK(out[2] == 1);
}
