#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sembridge/nn.hpp"
#include "support/gradcheck.hpp"

using namespace sembridge;
using testsupport::check_gradients;

namespace {

// Direct nested-loop convolution oracle (valid range, stride, zero padding).
TensorT<double> conv_naive(const TensorT<double> &x, const TensorT<double> &kernel,
                           int64_t width, int64_t stride, int64_t padding, int64_t out_ch) {
  int64_t in_ch = x.cols;
  int64_t padded = x.rows + 2 * padding;
  int64_t tprime = (padded - width) / stride + 1;
  TensorT<double> out(tprime, out_ch);
  for (int64_t t = 0; t < tprime; ++t)
    for (int64_t o = 0; o < out_ch; ++o) {
      double acc = 0;
      for (int64_t w = 0; w < width; ++w)
        for (int64_t d = 0; d < in_ch; ++d) {
          int64_t src = t * stride + w - padding;
          double xv = (src >= 0 && src < x.rows) ? x.at(src, d) : 0.0;
          acc += xv * kernel.at(w * in_ch + d, o);
        }
      out.at(t, o) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("conv1d: width-1 identity kernel copies the input") {
  Rng rng(1);
  Conv1dT<double> conv("c", 3, 3, {1, 1, 0}, rng, false);
  conv.kernel.value = TensorT<double>::eye(3);
  Tape<double> t;
  BinderT<double> b(t);
  TensorT<double> x = rng.randn<double>(5, 3);
  Var<double> y = conv.forward(b, t.constant(x));
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(y.value().data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv1d: output length arithmetic") {
  Rng rng(2);
  Conv1dT<double> conv("c", 2, 4, {3, 1, 0}, rng);
  Tape<double> t;
  BinderT<double> b(t);
  Var<double> y = conv.forward(b, t.constant(rng.randn<double>(5, 2)));
  CHECK(y.value().rows == 3);  // floor((5 - 3)/1) + 1
  CHECK(y.value().cols == 4);
  CHECK(conv_out_len(5, {3, 1, 0}) == 3);

  // too-short input errors
  CHECK_THROWS_AS((void)conv.forward(b, t.constant(rng.randn<double>(2, 2))),
                  std::invalid_argument);
}

TEST_CASE("conv1d matches the nested-loop oracle") {
  for (uint64_t seed : {3UL, 4UL, 5UL}) {
    Rng rng(seed);
    for (auto [width, stride, padding] : {std::tuple<int64_t, int64_t, int64_t>{3, 1, 0},
                                          {4, 2, 1},
                                          {2, 2, 0}}) {
      Conv1dT<double> conv("c", 3, 2, {width, stride, padding}, rng, false);
      TensorT<double> x = rng.randn<double>(9, 3);
      Tape<double> t;
      BinderT<double> b(t);
      Var<double> y = conv.forward(b, t.constant(x));
      TensorT<double> ref = conv_naive(x, conv.kernel.value, width, stride, padding, 2);
      REQUIRE(y.value().rows == ref.rows);
      for (size_t i = 0; i < ref.data.size(); ++i)
        CHECK(y.value().data[i] == doctest::Approx(ref.data[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("conv1d gradient passes finite differences") {
  for (uint64_t seed : {6UL, 7UL, 8UL}) {
    Rng rng(seed);
    Conv1dT<double> conv("c", 2, 3, {3, 2, 1}, rng);
    TensorT<double> x = rng.randn<double>(7, 2);
    auto rep = check_gradients(
        [&](Tape<double> &t, std::vector<Var<double>> &l) {
          Var<double> padded = t.pad_rows(l[0], 1, 1);
          Var<double> cols = t.unfold1d(padded, 3, 2);
          Var<double> y = t.matmul(cols, l[1]);
          y = t.add(y, t.repeat_rows(l[2], y.value().rows));
          return mean_all(t, square(t, y));
        },
        {x, conv.kernel.value, conv.bias.value});
    CHECK(rep.ok());
  }
}

TEST_CASE("multihead attention: single key yields the value row") {
  Rng rng(9);
  MultiheadAttentionT<double> mha("a", 4, 4, 4, 1, rng);
  mha.wq.weight.value = TensorT<double>::eye(4);
  mha.wk.weight.value = TensorT<double>::eye(4);
  mha.wv.weight.value = TensorT<double>::eye(4);
  mha.wo.weight.value = TensorT<double>::eye(4);
  Tape<double> t;
  BinderT<double> b(t);
  TensorT<double> kv = rng.randn<double>(1, 4);
  Var<double> out = mha.forward(b, t.constant(rng.randn<double>(3, 4)), t.constant(kv));
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j) CHECK(out.value().at(i, j) == doctest::Approx(kv.at(0, j)));
}

TEST_CASE("attention rows sum to one") {
  Rng rng(10);
  MultiheadAttentionT<double> mha("a", 6, 6, 6, 2, rng);
  Tape<double> t;
  BinderT<double> b(t);
  Var<double> q = t.constant(rng.randn<double>(4, 6));
  Var<double> kv = t.constant(rng.randn<double>(5, 6));
  for (int64_t h = 0; h < 2; ++h) {
    Var<double> w = mha.head_weights(b, q, kv, h);
    for (int64_t i = 0; i < w.value().rows; ++i) {
      double s = 0;
      for (int64_t j = 0; j < w.value().cols; ++j) {
        s += w.value().at(i, j);
        CHECK(w.value().at(i, j) >= 0.0);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("2-head attention matches an independent per-head loop") {
  for (uint64_t seed : {11UL, 12UL, 13UL}) {
    Rng rng(seed);
    const int64_t dm = 6, H = 2, dh = 3, Tq = 4, Tk = 5;
    MultiheadAttentionT<double> mha("a", dm, dm, dm, H, rng);
    TensorT<double> qin = rng.randn<double>(Tq, dm);
    TensorT<double> kvin = rng.randn<double>(Tk, dm);

    Tape<double> t;
    BinderT<double> b(t);
    Var<double> out = mha.forward(b, t.constant(qin), t.constant(kvin));

    // loop oracle
    auto matmul_ref = [](const TensorT<double> &a, const TensorT<double> &bm) {
      TensorT<double> r(a.rows, bm.cols);
      for (int64_t i = 0; i < a.rows; ++i)
        for (int64_t k = 0; k < a.cols; ++k)
          for (int64_t j = 0; j < bm.cols; ++j) r.at(i, j) += a.at(i, k) * bm.at(k, j);
      return r;
    };
    TensorT<double> q = matmul_ref(qin, mha.wq.weight.value);
    TensorT<double> k = matmul_ref(kvin, mha.wk.weight.value);
    TensorT<double> v = matmul_ref(kvin, mha.wv.weight.value);
    TensorT<double> merged(Tq, dm);
    for (int64_t h = 0; h < H; ++h) {
      for (int64_t i = 0; i < Tq; ++i) {
        std::vector<double> scores(Tk);
        double mx = -1e300;
        for (int64_t j = 0; j < Tk; ++j) {
          double s = 0;
          for (int64_t d = 0; d < dh; ++d) s += q.at(i, h * dh + d) * k.at(j, h * dh + d);
          scores[j] = s / std::sqrt(double(dh));
          mx = std::max(mx, scores[j]);
        }
        double z = 0;
        for (double &s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        for (int64_t j = 0; j < Tk; ++j)
          for (int64_t d = 0; d < dh; ++d)
            merged.at(i, h * dh + d) += scores[j] / z * v.at(j, h * dh + d);
      }
    }
    TensorT<double> ref = matmul_ref(merged, mha.wo.weight.value);
    for (size_t i = 0; i < ref.data.size(); ++i)
      CHECK(out.value().data[i] == doctest::Approx(ref.data[i]).epsilon(1e-6));
  }
}

TEST_CASE("attention gradient passes finite differences") {
  Rng rng(14);
  MultiheadAttentionT<double> mha("a", 4, 4, 4, 2, rng);
  TensorT<double> qin = rng.randn<double>(3, 4);
  TensorT<double> kvin = rng.randn<double>(4, 4);
  auto rep = check_gradients(
      [&](Tape<double> &t, std::vector<Var<double>> &l) {
        Var<double> q = t.matmul(t.constant(qin), l[0]);
        Var<double> k = t.matmul(t.constant(kvin), l[1]);
        Var<double> v = t.matmul(t.constant(kvin), l[2]);
        Var<double> out;
        for (int64_t h = 0; h < 2; ++h) {
          Var<double> qh = t.slice_cols(q, h * 2, (h + 1) * 2);
          Var<double> kh = t.slice_cols(k, h * 2, (h + 1) * 2);
          Var<double> vh = t.slice_cols(v, h * 2, (h + 1) * 2);
          Var<double> attn = t.softmax_rows(t.smul(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(2.0)));
          Var<double> oh = t.matmul(attn, vh);
          out = (h == 0) ? oh : t.concat_cols(out, oh);
        }
        return mean_all(t, square(t, t.matmul(out, l[3])));
      },
      {mha.wq.weight.value, mha.wk.weight.value, mha.wv.weight.value, mha.wo.weight.value});
  CHECK(rep.ok());
}

TEST_CASE("layer norm normalizes rows and passes finite differences") {
  Rng rng(15);
  LayerNormT<double> ln("ln", 5);
  Tape<double> t;
  BinderT<double> b(t);
  TensorT<double> x = rng.randn<double>(3, 5);
  Var<double> y = ln.forward(b, t.constant(x));
  for (int64_t i = 0; i < 3; ++i) {
    double mean = 0, var = 0;
    for (int64_t j = 0; j < 5; ++j) mean += y.value().at(i, j);
    mean /= 5;
    for (int64_t j = 0; j < 5; ++j) var += std::pow(y.value().at(i, j) - mean, 2);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var / 5 == doctest::Approx(1.0).epsilon(1e-4));
  }

  auto rep = check_gradients(
      [&](Tape<double> &t2, std::vector<Var<double>> &l) {
        int64_t c = 5, r = l[0].value().rows;
        Var<double> mu = t2.smul(t2.rowwise_sum(l[0]), 1.0 / 5);
        Var<double> centered = t2.sub(l[0], t2.repeat_cols(mu, c));
        Var<double> var = t2.smul(t2.rowwise_sum(square(t2, centered)), 1.0 / 5);
        Var<double> inv = t2.pow_const(t2.sadd(var, 1e-5), -0.5);
        Var<double> normed = t2.mul(centered, t2.repeat_cols(inv, c));
        Var<double> out = t2.add(t2.mul(normed, t2.repeat_rows(l[1], r)), t2.repeat_rows(l[2], r));
        return mean_all(t2, square(t2, out));
      },
      {x, ln.gain.value, ln.bias.value});
  CHECK(rep.ok());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Rng rng(16);
  ParameterT<float> p{"p", rng.randn<float>(2, 3), false};
  TensorT<float> before = p.value;
  AdamT<float> opt({&p}, {});
  opt.step({{"p", TensorT<float>::zeros(2, 3)}});
  for (size_t i = 0; i < before.data.size(); ++i) CHECK(p.value.data[i] == before.data[i]);
}

TEST_CASE("adam: first step moves by -lr * sign(g) (closed form at t=1)") {
  ParameterT<double> p{"p", TensorT<double>::zeros(1, 3), false};
  TensorT<double> g(1, 3, {0.5, -2.0, 1e-3});
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.eps = 1e-8;
  AdamT<double> opt({&p}, cfg);
  opt.step({{"p", g}});
  for (int j = 0; j < 3; ++j) {
    double expected = -cfg.lr * g.data[j] / (std::abs(g.data[j]) + cfg.eps);
    CHECK(p.value.data[j] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("adam: two steps match the hand-computed recurrence in 64-bit") {
  ParameterT<double> p{"p", TensorT<double>::scalar(1.0), false};
  AdamConfig cfg;
  cfg.lr = 0.05;
  AdamT<double> opt({&p}, cfg);
  double g1 = 0.3, g2 = -0.7;

  // oracle: scalar recurrence
  double m = 0, v = 0, x = 1.0;
  for (int step = 1; step <= 2; ++step) {
    double g = (step == 1) ? g1 : g2;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    double mh = m / (1 - std::pow(cfg.beta1, step));
    double vh = v / (1 - std::pow(cfg.beta2, step));
    x -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
  }

  opt.step({{"p", TensorT<double>::scalar(g1)}});
  opt.step({{"p", TensorT<double>::scalar(g2)}});
  CHECK(p.value.item() == doctest::Approx(x).epsilon(1e-10));
}

TEST_CASE("adam rejects non-finite gradients") {
  ParameterT<double> p{"p", TensorT<double>::scalar(1.0), false};
  AdamT<double> opt({&p}, {});
  TensorT<double> g = TensorT<double>::scalar(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(opt.step({{"p", g}}), std::runtime_error);
}

TEST_CASE("frozen parameters are never updated by adam") {
  ParameterT<double> p{"p", TensorT<double>::scalar(2.0), true};
  AdamT<double> opt({&p}, {});
  opt.step({{"p", TensorT<double>::scalar(1.0)}});
  CHECK(p.value.item() == 2.0);
}

TEST_CASE("rnn gradient passes finite differences") {
  Rng rng(17);
  TensorT<double> x = rng.randn<double>(4, 3);
  TensorT<double> wi = rng.randn<double>(3, 2, 0.5);
  TensorT<double> wh = rng.randn<double>(2, 2, 0.5);
  auto rep = check_gradients(
      [](Tape<double> &t, std::vector<Var<double>> &l) {
        Var<double> pre = t.matmul(l[0], l[1]);
        Var<double> h = t.constant(TensorT<double>::zeros(1, 2));
        Var<double> states;
        for (int64_t i = 0; i < 4; ++i) {
          h = t.tanh_v(t.add(t.slice_rows(pre, i, i + 1), t.matmul(h, l[2])));
          states = (i == 0) ? h : t.concat_rows(states, h);
        }
        return mean_all(t, square(t, states));
      },
      {x, wi, wh});
  CHECK(rep.ok());
}

TEST_CASE("cross entropy: probability-1 prediction has zero loss") {
  Tape<double> t;
  TensorT<double> logits(2, 3);
  logits.at(0, 1) = 200.0;
  logits.at(1, 2) = 200.0;
  Var<double> loss = cross_entropy_rows(t, t.constant(logits), {1, 2});
  CHECK(loss.value().item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("parameter hashes detect any value change") {
  Rng rng(18);
  ParameterT<float> p{"p", rng.randn<float>(3, 3), false};
  uint64_t h0 = param_hash(p);
  CHECK(param_hash(p) == h0);
  p.value.at(1, 1) += 1e-6f;
  CHECK(param_hash(p) != h0);
}
