#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "skipnet/autodiff.hpp"
#include "skipnet/rng.hpp"

using skipnet::Rng;
using skipnet::Tensor;
using Tape = skipnet::Tape<double>;

namespace {

Tensor<double> random_tensor(const skipnet::Shape& shape, Rng& rng,
                             double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t) v = rng.uniform(lo, hi);
  return t;
}

// Central-difference check of `analytic` against a loss functional that
// re-reads `param` on every call. Relative error per the gradcheck contract.
template <typename F>
void check_against_fd(Tensor<double>& param, const Tensor<double>& analytic,
                      F&& loss_fn, double step = 1e-5, double tol = 1e-6) {
  REQUIRE(param.same_shape(analytic));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double orig = param[i];
    param[i] = orig + step;
    const double up = loss_fn();
    param[i] = orig - step;
    const double down = loss_fn();
    param[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double rel =
        std::abs(analytic[i] - numeric) /
        std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    CHECK(rel < tol);
  }
}

}  // namespace

TEST_CASE("linear loss: grad of w in sum(w*x) is exactly x") {
  Rng rng(101);
  Tensor<double> w = random_tensor({2, 3}, rng);
  Tensor<double> x = random_tensor({2, 3}, rng);
  Tape tape;
  auto wr = tape.parameter(w, "w");
  auto xr = tape.leaf(x, "x");
  auto loss = tape.sum(tape.mul(wr, xr));
  auto grads = tape.backward(loss);
  const Tensor<double>& gw = grads.at("w");
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(gw[i] == x[i]);
}

TEST_CASE("sigmoid at 0 scaled by c: grad is 0.25*c") {
  Tape tape;
  auto x = tape.parameter(Tensor<double>::scalar(0.0), "x");
  auto c = tape.leaf(Tensor<double>::scalar(3.0), "c");
  auto loss = tape.sum(tape.mul(tape.sigmoid(x), c));
  auto grads = tape.backward(loss);
  CHECK(grads.at("x")[0] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("conv2d backward matches finite differences") {
  Rng rng(103);
  Tensor<double> x = random_tensor({1, 2, 5, 5}, rng);
  Tensor<double> w = random_tensor({3, 2, 3, 3}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  const auto spec = skipnet::ConvSpec::same(3, 2);

  auto loss_fn = [&] {
    Tape t;
    auto conv = t.conv2d(t.parameter(x, "x"), t.parameter(w, "w"),
                         t.parameter(b, "b"), spec);
    return t.value(t.sum(t.relu(conv)))[0];
  };
  Tape t;
  auto conv = t.conv2d(t.parameter(x, "x"), t.parameter(w, "w"),
                       t.parameter(b, "b"), spec);
  auto grads = t.backward(t.sum(t.relu(conv)));
  check_against_fd(x, grads.at("x"), loss_fn);
  check_against_fd(w, grads.at("w"), loss_fn);
  check_against_fd(b, grads.at("b"), loss_fn);
}

TEST_CASE("strided conv2d backward matches finite differences") {
  Rng rng(105);
  Tensor<double> x = random_tensor({2, 2, 6, 6}, rng);
  Tensor<double> w = random_tensor({3, 2, 2, 2}, rng);
  Tensor<double> b = random_tensor({3}, rng);
  const auto spec = skipnet::ConvSpec::square(2, 2);

  auto loss_fn = [&] {
    Tape t;
    auto conv = t.conv2d(t.parameter(x, "x"), t.parameter(w, "w"),
                         t.parameter(b, "b"), spec);
    return t.value(t.sum(t.sigmoid(conv)))[0];
  };
  Tape t;
  auto conv = t.conv2d(t.parameter(x, "x"), t.parameter(w, "w"),
                       t.parameter(b, "b"), spec);
  auto grads = t.backward(t.sum(t.sigmoid(conv)));
  check_against_fd(x, grads.at("x"), loss_fn);
  check_against_fd(w, grads.at("w"), loss_fn);
  check_against_fd(b, grads.at("b"), loss_fn);
}

TEST_CASE("maxpool2d backward matches finite differences") {
  // Values spaced 0.01 apart so finite differencing never crosses a tie.
  std::vector<double> vals(72);
  for (std::size_t i = 0; i < vals.size(); ++i)
    vals[i] = 0.01 * static_cast<double>(i);
  Rng rng(107);
  rng.shuffle(vals);
  Tensor<double> x({1, 2, 6, 6}, vals);

  auto loss_fn = [&] {
    Tape t;
    auto pooled = t.maxpool2d(t.parameter(x, "x"), 2, 2, 2, 2);
    return t.value(t.sum(pooled))[0];
  };
  Tape t;
  auto pooled = t.maxpool2d(t.parameter(x, "x"), 2, 2, 2, 2);
  auto grads = t.backward(t.sum(pooled));
  check_against_fd(x, grads.at("x"), loss_fn, 1e-5, 1e-9);
}

TEST_CASE("dense backward matches finite differences") {
  Rng rng(109);
  Tensor<double> x = random_tensor({3, 4}, rng);
  Tensor<double> w = random_tensor({2, 4}, rng);
  Tensor<double> b = random_tensor({2}, rng);

  auto loss_fn = [&] {
    Tape t;
    auto out = t.dense(t.parameter(x, "x"), t.parameter(w, "w"),
                       t.parameter(b, "b"));
    return t.value(t.sum(t.sigmoid(out)))[0];
  };
  Tape t;
  auto out =
      t.dense(t.parameter(x, "x"), t.parameter(w, "w"), t.parameter(b, "b"));
  auto grads = t.backward(t.sum(t.sigmoid(out)));
  check_against_fd(x, grads.at("x"), loss_fn);
  check_against_fd(w, grads.at("w"), loss_fn);
  check_against_fd(b, grads.at("b"), loss_fn);
}

TEST_CASE("relu backward matches finite differences away from the kink") {
  Rng rng(113);
  Tensor<double> x({2, 8});
  for (auto& v : x) {
    v = rng.uniform(0.1, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  }
  auto loss_fn = [&] {
    Tape t;
    return t.value(t.sum(t.relu(t.parameter(x, "x"))))[0];
  };
  Tape t;
  auto grads = t.backward(t.sum(t.relu(t.parameter(x, "x"))));
  check_against_fd(x, grads.at("x"), loss_fn, 1e-5, 1e-9);
}

TEST_CASE("add, mul, broadcast-mul, reshape backward match finite differences") {
  Rng rng(127);
  Tensor<double> a = random_tensor({1, 3, 4, 4}, rng);
  Tensor<double> m = random_tensor({1, 1, 4, 4}, rng);
  Tensor<double> c = random_tensor({1, 3, 4, 4}, rng);

  auto loss_fn = [&] {
    Tape t;
    auto ar = t.parameter(a, "a");
    auto mr = t.parameter(m, "m");
    auto cr = t.parameter(c, "c");
    auto y = t.add(t.mul_broadcast(ar, mr), t.mul(ar, cr));
    auto flat = t.reshape(y, {1, 3 * 4 * 4});
    return t.value(t.sum(t.sigmoid(flat)))[0];
  };
  Tape t;
  auto ar = t.parameter(a, "a");
  auto mr = t.parameter(m, "m");
  auto cr = t.parameter(c, "c");
  auto y = t.add(t.mul_broadcast(ar, mr), t.mul(ar, cr));
  auto flat = t.reshape(y, {1, 3 * 4 * 4});
  auto grads = t.backward(t.sum(t.sigmoid(flat)));
  check_against_fd(a, grads.at("a"), loss_fn);
  check_against_fd(m, grads.at("m"), loss_fn);
  check_against_fd(c, grads.at("c"), loss_fn);
}

TEST_CASE("batchnorm training-mode backward flows through batch statistics") {
  Rng rng(131);
  Tensor<double> x = random_tensor({2, 3, 4, 4}, rng);
  Tensor<double> gamma = random_tensor({3}, rng, 0.5, 1.5);
  Tensor<double> beta = random_tensor({3}, rng);
  Tensor<double> r = random_tensor({2, 3, 4, 4}, rng);  // breaks symmetry
  const double eps = 1e-5;

  auto loss_fn = [&] {
    Tape t;
    auto y = t.batchnorm_train(t.parameter(x, "x"), t.parameter(gamma, "g"),
                               t.parameter(beta, "b"), eps);
    return t.value(t.sum(t.mul(y, t.leaf(r))))[0];
  };
  Tape t;
  Tape::BatchStats stats;
  auto y = t.batchnorm_train(t.parameter(x, "x"), t.parameter(gamma, "g"),
                             t.parameter(beta, "b"), eps, &stats);
  auto grads = t.backward(t.sum(t.mul(y, t.leaf(r))));
  check_against_fd(x, grads.at("x"), loss_fn, 1e-5, 1e-5);
  check_against_fd(gamma, grads.at("g"), loss_fn);
  check_against_fd(beta, grads.at("b"), loss_fn);

  // Reported statistics: biased for normalization, unbiased for running.
  const std::size_t m = 2 * 4 * 4;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w) sum += x(n, c, h, w);
    const double mean = sum / static_cast<double>(m);
    CHECK(stats.mean[c] == doctest::Approx(mean).epsilon(1e-12));
    double sq = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w)
          sq += (x(n, c, h, w) - mean) * (x(n, c, h, w) - mean);
    CHECK(stats.var_biased[c] ==
          doctest::Approx(sq / static_cast<double>(m)).epsilon(1e-12));
    CHECK(stats.var_unbiased[c] ==
          doctest::Approx(sq / static_cast<double>(m - 1)).epsilon(1e-12));
  }
}

TEST_CASE("batchnorm eval-mode treats running statistics as constants") {
  Rng rng(137);
  Tensor<double> x = random_tensor({2, 3, 4, 4}, rng);
  Tensor<double> gamma = random_tensor({3}, rng, 0.5, 1.5);
  Tensor<double> beta = random_tensor({3}, rng);
  Tensor<double> mean = random_tensor({3}, rng, -0.2, 0.2);
  Tensor<double> var = random_tensor({3}, rng, 0.5, 1.5);
  Tensor<double> r = random_tensor({2, 3, 4, 4}, rng);
  const double eps = 1e-5;

  auto loss_fn = [&] {
    Tape t;
    auto y = t.batchnorm_eval(t.parameter(x, "x"), t.parameter(gamma, "g"),
                              t.parameter(beta, "b"), mean, var, eps);
    return t.value(t.sum(t.mul(y, t.leaf(r))))[0];
  };
  Tape t;
  auto y = t.batchnorm_eval(t.parameter(x, "x"), t.parameter(gamma, "g"),
                            t.parameter(beta, "b"), mean, var, eps);
  auto grads = t.backward(t.sum(t.mul(y, t.leaf(r))));
  check_against_fd(x, grads.at("x"), loss_fn);
  check_against_fd(gamma, grads.at("g"), loss_fn);
  check_against_fd(beta, grads.at("b"), loss_fn);
}

TEST_CASE("dropout backward is zero exactly where the mask zeroed the input") {
  Rng rng(139);
  Tensor<double> x = random_tensor({2, 10}, rng);
  const double rate = 0.4;
  Tensor<double> mask({2, 10});
  for (auto& v : mask) {
    v = rng.uniform() < rate ? 0.0 : 1.0 / (1.0 - rate);
  }
  Tape t;
  auto xr = t.parameter(x, "x");
  auto grads = t.backward(t.sum(t.dropout(xr, mask)));
  const Tensor<double>& gx = grads.at("x");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0) {
      CHECK(gx[i] == 0.0);
    } else {
      CHECK(gx[i] == doctest::Approx(1.0 / (1.0 - rate)).epsilon(1e-12));
    }
  }
}

TEST_CASE("sparse_ce value and backward") {
  Rng rng(149);
  Tensor<double> logits = random_tensor({4, 3}, rng, -2.0, 2.0);
  std::vector<std::size_t> labels = {0, 2, 1, 1};

  Tape t0;
  auto l0 = t0.sparse_ce(t0.parameter(logits, "z"), labels);
  CHECK(t0.value(l0)[0] ==
        doctest::Approx(oracle::sparse_ce_ref(logits, labels)).epsilon(1e-10));
  CHECK(t0.value(l0)[0] >= 0.0);  // log-sum-exp form is non-negative

  // Uniform logits over K classes must give exactly ln K.
  Tape t1;
  auto flat = t1.sparse_ce(t1.leaf(Tensor<double>({2, 3})), {0, 1});
  CHECK(t1.value(flat)[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  auto loss_fn = [&] {
    Tape t;
    return t.value(t.sparse_ce(t.parameter(logits, "z"), labels))[0];
  };
  Tape t;
  auto grads = t.backward(t.sparse_ce(t.parameter(logits, "z"), labels));
  check_against_fd(logits, grads.at("z"), loss_fn);

  // Extreme logits stay finite thanks to max subtraction.
  Tensor<double> huge({1, 3}, {1000.0, -1000.0, 500.0});
  Tape t2;
  auto big_loss = t2.sparse_ce(t2.leaf(huge), {1});
  CHECK(std::isfinite(t2.value(big_loss)[0]));

  Tape t3;
  CHECK_THROWS_AS(t3.sparse_ce(t3.leaf(logits), {0, 1, 2, 5}),
                  skipnet::DataError);
  Tape t4;
  CHECK_THROWS_AS(t4.sparse_ce(t4.leaf(logits), {0}), skipnet::DimensionError);
}

TEST_CASE("backward twice yields identical gradients (no accumulation)") {
  Rng rng(151);
  Tensor<double> x = random_tensor({1, 2, 6, 6}, rng);
  Tensor<double> w = random_tensor({2, 2, 3, 3}, rng);
  Tensor<double> b = random_tensor({2}, rng);
  Tape t;
  auto conv = t.conv2d(t.parameter(x, "x"), t.parameter(w, "w"),
                       t.parameter(b, "b"), skipnet::ConvSpec::same(3));
  auto loss = t.sum(t.relu(conv));
  auto first = t.backward(loss);
  auto second = t.backward(loss);
  for (const auto& [name, g] : first) {
    const Tensor<double>& g2 = second.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == g2[i]);
  }
}

TEST_CASE("parameters the loss does not reach get exact zero gradients") {
  Rng rng(157);
  Tensor<double> used = random_tensor({2, 2}, rng);
  Tensor<double> unused = random_tensor({3, 3}, rng);
  Tape t;
  auto ur = t.parameter(used, "used");
  t.parameter(unused, "unused");
  auto grads = t.backward(t.sum(t.mul(ur, ur)));
  CHECK(grads.count("unused") == 1);
  for (double v : grads.at("unused")) CHECK(v == 0.0);
  for (std::size_t i = 0; i < used.size(); ++i)
    CHECK(grads.at("used")[i] == doctest::Approx(2.0 * used[i]));
}

TEST_CASE("non-scalar loss is rejected") {
  Tape t;
  auto x = t.parameter(Tensor<double>({2, 2}), "x");
  CHECK_THROWS_AS(t.backward(x), skipnet::UsageError);
}

TEST_CASE("non-finite gradients raise a numeric error naming the node") {
  // Forward values stay finite but the chain-rule product overflows.
  Tape t;
  auto a = t.parameter(Tensor<double>::scalar(1e-300), "a");
  auto b = t.leaf(Tensor<double>::scalar(1e300), "b");
  auto c = t.leaf(Tensor<double>::scalar(1e300), "c");
  auto y1 = t.mul(a, b);          // 1
  auto y2 = t.mul(y1, c);         // 1e300, finite
  auto loss = t.sum(y2);
  // da = 1e300 * 1e300 overflows to inf.
  CHECK_THROWS_WITH_AS(t.backward(loss), doctest::Contains("'a'"),
                       skipnet::NumericError);
}

TEST_CASE("gradients on a float32 tape agree with the float64 tape") {
  Rng rng(163);
  Tensor<double> xd = random_tensor({1, 2, 6, 6}, rng);
  Tensor<double> wd = random_tensor({2, 2, 3, 3}, rng);
  Tensor<double> bd = random_tensor({2}, rng);
  auto xf = skipnet::tensor_cast<float>(xd);
  auto wf = skipnet::tensor_cast<float>(wd);
  auto bf = skipnet::tensor_cast<float>(bd);

  Tape td;
  auto gd = td.backward(td.sum(td.sigmoid(
      td.conv2d(td.parameter(xd, "x"), td.parameter(wd, "w"),
                td.parameter(bd, "b"), skipnet::ConvSpec::same(3)))));
  skipnet::Tape<float> tf;
  auto gf = tf.backward(tf.sum(tf.sigmoid(
      tf.conv2d(tf.parameter(xf, "x"), tf.parameter(wf, "w"),
                tf.parameter(bf, "b"), skipnet::ConvSpec::same(3)))));
  for (const auto& [name, g] : gd) {
    const auto& g32 = gf.at(name);
    for (std::size_t i = 0; i < g.size(); ++i)
      CHECK(static_cast<double>(g32[i]) == doctest::Approx(g[i]).epsilon(1e-3));
  }
}
