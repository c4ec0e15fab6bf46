#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "skipnet/gradcheck.hpp"
#include "skipnet/rng.hpp"

using skipnet::GradCheckOptions;
using skipnet::Mode;
using skipnet::ModelConfig;
using skipnet::Rng;
using skipnet::SkipNet;
using skipnet::Tensor;

namespace {

Tensor<double> random_input(std::size_t n, std::size_t size, Rng& rng) {
  Tensor<double> t({n, 1, size, size});
  for (auto& v : t) v = rng.uniform(0.0, 1.0);
  return t;
}

ModelConfig one_block_config() {
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.channels = {4};
  cfg.classifier_hidden = 8;
  cfg.dropout_rate = 0.25;
  return cfg;
}

}  // namespace

TEST_CASE("dense-only gradcheck_core passes below 1e-6") {
  Rng rng(401);
  Tensor<double> x({4, 6});
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  Tensor<double> w({3, 6}), b({3});
  for (auto& v : w) v = rng.uniform(-0.5, 0.5);
  for (auto& v : b) v = rng.uniform(-0.5, 0.5);
  std::vector<std::size_t> labels = {0, 2, 1, 0};

  auto loss_fn = [&] {
    skipnet::Tape<double> t;
    auto out = t.dense(t.parameter(x, "x"), t.parameter(w, "w"),
                       t.parameter(b, "b"));
    return t.value(t.sparse_ce(out, labels))[0];
  };
  skipnet::Tape<double> t;
  auto out =
      t.dense(t.parameter(x, "x"), t.parameter(w, "w"), t.parameter(b, "b"));
  auto grads = t.backward(t.sparse_ce(out, labels));

  GradCheckOptions opts;
  opts.threshold = 1e-6;
  auto report = skipnet::gradcheck_core(
      {{"x", &x}, {"w", &w}, {"b", &b}}, grads, loss_fn, opts);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-6);
  CHECK(report.entries.size() == 3);
}

TEST_CASE("one-block model passes gradcheck below 1e-4 with dropout frozen") {
  SkipNet<double> model(one_block_config(), 23);
  Rng rng(403);
  Tensor<double> input = random_input(2, 16, rng);
  std::vector<std::size_t> labels = {0, 2};

  auto report = skipnet::gradcheck(model, input, labels);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-4);
  // Every learnable tensor shows up in the table.
  std::size_t tensors = 0;
  model.visit_parameters([&](const std::string&, Tensor<double>&) { ++tensors; });
  CHECK(report.entries.size() == tensors);

  // Same model state and options reproduce the identical report.
  auto again = skipnet::gradcheck(model, input, labels);
  REQUIRE(again.entries.size() == report.entries.size());
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    CHECK(again.entries[i].name == report.entries[i].name);
    CHECK(again.entries[i].max_rel_err == report.entries[i].max_rel_err);
  }
}

TEST_CASE("reduced models at every depth pass gradcheck below 1e-4") {
  // Same configuration family the CLI's gradcheck command builds: 32x32
  // input, width plan 4/8/16/32 truncated to the requested depth.
  const std::vector<std::size_t> plan = {4, 8, 16, 32};
  for (std::size_t depth = 1; depth <= 4; ++depth) {
    CAPTURE(depth);
    ModelConfig cfg;
    cfg.input_size = 32;
    cfg.channels.assign(plan.begin(), plan.begin() + depth);
    cfg.classifier_hidden = 32;
    SkipNet<double> model(cfg, 0);
    Rng rng = Rng(0).fork(777);
    Tensor<double> input = random_input(2, 32, rng);
    std::vector<std::size_t> labels = {rng.uniform_int(3), rng.uniform_int(3)};
    auto report = skipnet::gradcheck(model, input, labels);
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("coordinates below finite-difference resolution are set aside") {
  // The scaled-down final dense layer leaves some sampled gradients near
  // 1e-9 — below what central differences can resolve in 64-bit. Those
  // comparisons must be counted out rather than scored as noise.
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.channels = {4};
  cfg.classifier_hidden = 32;
  SkipNet<double> model(cfg, 0);
  Rng rng = Rng(0).fork(777);
  Tensor<double> input = random_input(2, 32, rng);
  std::vector<std::size_t> labels = {rng.uniform_int(3), rng.uniform_int(3)};

  auto report = skipnet::gradcheck(model, input, labels);
  std::size_t unmeasurable = 0;
  for (const auto& e : report.entries) unmeasurable += e.unmeasurable;
  CHECK(unmeasurable > 0);
  CHECK(report.passed);

  // With the floor disabled the same configuration drowns in roundoff:
  // the check would reject a correct backward pass.
  GradCheckOptions raw;
  raw.measurable_floor = 0.0;
  auto noisy = skipnet::gradcheck(model, input, labels, raw);
  CHECK(noisy.max_rel_err > report.max_rel_err);
  CHECK_FALSE(noisy.passed);
}

TEST_CASE("corrupted backward is caught (negative control)") {
  SkipNet<double> model(one_block_config(), 29);
  Rng rng(407);
  Tensor<double> input = random_input(2, 16, rng);
  GradCheckOptions opts;
  opts.corrupt_backward = true;
  auto report = skipnet::gradcheck(model, input, {1, 2}, opts);
  CHECK_FALSE(report.passed);
}

TEST_CASE("unattainable threshold fails") {
  SkipNet<double> model(one_block_config(), 31);
  Rng rng(409);
  Tensor<double> input = random_input(2, 16, rng);
  GradCheckOptions opts;
  opts.threshold = 1e-12;
  auto report = skipnet::gradcheck(model, input, {0, 1}, opts);
  CHECK_FALSE(report.passed);
}

TEST_CASE("gradcheck refuses the 32-bit mode") {
  ModelConfig cfg = one_block_config();
  SkipNet<float> model(cfg, 37);
  Tensor<float> input({2, 1, 16, 16});
  CHECK_THROWS_AS(skipnet::gradcheck(model, input, {0, 1}),
                  skipnet::UsageError);
}
