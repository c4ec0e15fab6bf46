#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>

#include "skipnet/autodiff.hpp"
#include "skipnet/error.hpp"
#include "skipnet/rng.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

// Train: batch statistics + stochastic masks, running stats updated.
// Eval: running statistics, dropout is the identity.
// GradCheck: batch statistics like Train, but dropout masks are frozen and
// running stats are left untouched, so repeated forwards are a pure function
// of the parameters (required for finite differencing).
enum class Mode { Train, Eval, GradCheck };

template <typename S>
struct Conv2DLayer {
  std::string name;
  Tensor<S> weight;  // [C_out, C_in, kh, kw]
  Tensor<S> bias;    // [C_out]; a frozen zero constant when has_bias is false
  ConvSpec spec;
  // Convs feeding straight into batchnorm run bias-free: the normalization
  // subtracts any per-channel constant, so such a bias has exactly zero
  // gradient and only poisons finite-difference checks with noise.
  bool has_bias = true;

  Conv2DLayer() = default;
  Conv2DLayer(std::string layer_name, std::size_t c_out, std::size_t c_in,
              const ConvSpec& conv_spec, bool with_bias = true)
      : name(std::move(layer_name)),
        weight({c_out, c_in, conv_spec.kernel_h, conv_spec.kernel_w}),
        bias({c_out}),
        spec(conv_spec),
        has_bias(with_bias) {
    spec.validate();
  }

  void init(Rng& rng) {
    const std::size_t fan_in =
        weight.extent(1) * weight.extent(2) * weight.extent(3);
    const S bound = static_cast<S>(
        std::sqrt(6.0 / static_cast<double>(fan_in)));
    for (auto& v : weight) v = static_cast<S>(rng.uniform(-bound, bound));
    bias.fill(S(0));
  }

  typename Tape<S>::ValueRef forward(Tape<S>& t,
                                     typename Tape<S>::ValueRef x) {
    auto w = t.parameter(weight, name + ".weight");
    auto b = has_bias ? t.parameter(bias, name + ".bias")
                      : t.leaf(bias, name + ".bias");
    return t.conv2d(x, w, b, spec);
  }

  std::size_t num_parameters() const {
    return weight.size() + (has_bias ? bias.size() : 0);
  }
};

template <typename S>
struct DenseLayer {
  std::string name;
  Tensor<S> weight;  // [F_out, F_in]
  Tensor<S> bias;    // [F_out]

  DenseLayer() = default;
  DenseLayer(std::string layer_name, std::size_t f_out, std::size_t f_in)
      : name(std::move(layer_name)), weight({f_out, f_in}), bias({f_out}) {}

  void init(Rng& rng) {
    const S bound = static_cast<S>(
        std::sqrt(6.0 / static_cast<double>(weight.extent(1))));
    for (auto& v : weight) v = static_cast<S>(rng.uniform(-bound, bound));
    bias.fill(S(0));
  }

  typename Tape<S>::ValueRef forward(Tape<S>& t,
                                     typename Tape<S>::ValueRef x) {
    auto w = t.parameter(weight, name + ".weight");
    auto b = t.parameter(bias, name + ".bias");
    return t.dense(x, w, b);
  }

  std::size_t num_parameters() const { return weight.size() + bias.size(); }
};

template <typename S>
struct BatchNorm2DLayer {
  std::string name;
  Tensor<S> gamma, beta;
  Tensor<S> running_mean, running_var;
  S epsilon = static_cast<S>(1e-5);
  S momentum = static_cast<S>(0.1);

  BatchNorm2DLayer() = default;
  BatchNorm2DLayer(std::string layer_name, std::size_t channels)
      : name(std::move(layer_name)),
        gamma({channels}),
        beta({channels}),
        running_mean({channels}),
        running_var({channels}) {
    init_state();
  }

  void init_state() {
    gamma.fill(S(1));
    beta.fill(S(0));
    running_mean.fill(S(0));
    running_var.fill(S(1));
  }
  void init(Rng&) { init_state(); }

  typename Tape<S>::ValueRef forward(Tape<S>& t,
                                     typename Tape<S>::ValueRef x, Mode mode) {
    auto g = t.parameter(gamma, name + ".gamma");
    auto b = t.parameter(beta, name + ".beta");
    if (mode == Mode::Eval) {
      return t.batchnorm_eval(x, g, b, running_mean, running_var, epsilon);
    }
    typename Tape<S>::BatchStats stats;
    auto y = t.batchnorm_train(x, g, b, epsilon, &stats);
    if (mode == Mode::Train) {
      // Normalization used the biased variance; the running estimate keeps
      // the unbiased one (standard convention, must hold for tests).
      for (std::size_t c = 0; c < running_mean.size(); ++c) {
        running_mean[c] =
            (S(1) - momentum) * running_mean[c] + momentum * stats.mean[c];
        running_var[c] = (S(1) - momentum) * running_var[c] +
                         momentum * stats.var_unbiased[c];
      }
    }
    return y;
  }

  std::size_t num_parameters() const { return gamma.size() + beta.size(); }
};

template <typename S>
struct DropoutLayer {
  std::string name;
  S rate = S(0);
  Rng rng{0};           // streams a fresh mask per training forward
  Rng frozen_source{0}; // pristine copy: frozen masks are re-derivable
  // GradCheck forwards reuse one mask so the loss stays deterministic while
  // parameters are perturbed.
  std::optional<Tensor<S>> frozen_mask;

  DropoutLayer() = default;
  DropoutLayer(std::string layer_name, S drop_rate, Rng mask_rng)
      : name(std::move(layer_name)),
        rate(drop_rate),
        rng(mask_rng),
        frozen_source(mask_rng) {
    if (rate < S(0) || rate >= S(1)) {
      throw ConfigError("dropout rate must be in [0,1), got " +
                        std::to_string(static_cast<double>(rate)));
    }
  }

  void clear_frozen_mask() { frozen_mask.reset(); }

  typename Tape<S>::ValueRef forward(Tape<S>& t,
                                     typename Tape<S>::ValueRef x, Mode mode) {
    if (mode == Mode::Eval || rate == S(0)) return x;  // identity
    if (mode == Mode::GradCheck) {
      if (!frozen_mask || !frozen_mask->same_shape(t.value(x))) {
        // Derive from the pristine generator so repeated gradchecks see the
        // same mask and the training stream is not consumed.
        Rng stable = frozen_source;
        frozen_mask = make_mask(t.value(x).shape(), stable);
      }
      return t.dropout(x, *frozen_mask);
    }
    return t.dropout(x, make_mask(t.value(x).shape(), rng));
  }

  std::size_t num_parameters() const { return 0; }

 private:
  Tensor<S> make_mask(const Shape& shape, Rng& source) const {
    Tensor<S> mask(shape);
    const S keep_scale = S(1) / (S(1) - rate);
    for (auto& v : mask) {
      v = (source.uniform() < static_cast<double>(rate)) ? S(0) : keep_scale;
    }
    return mask;
  }
};

}  // namespace skipnet
