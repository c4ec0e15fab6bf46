#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skipnet/autodiff.hpp"
#include "skipnet/error.hpp"
#include "skipnet/layers.hpp"
#include "skipnet/rng.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

// Architecture hyperparameters. Everything here is configuration, not a
// constant: reduced variants (fewer blocks, narrower channels, smaller
// inputs) are first-class citizens for gradient checking and fast tests.
struct ModelConfig {
  std::size_t input_size = 128;
  std::size_t in_channels = 1;
  std::vector<std::size_t> channels = {16, 32, 64, 128};  // one entry per block
  std::size_t sal_ratio = 4;
  std::size_t sal_dilation = 2;
  double dropout_rate = 0.25;
  std::size_t classifier_hidden = 128;
  std::size_t num_classes = 3;

  std::size_t num_blocks() const { return channels.size(); }

  // Spatial extent after all blocks (each halves) and the downsample conv.
  std::size_t final_extent() const {
    return input_size >> (channels.size() + 1);
  }

  void validate() const {
    if (channels.empty()) throw ConfigError("model needs at least one block");
    for (std::size_t c : channels) {
      if (c == 0) throw ConfigError("block channel count must be positive");
    }
    if (in_channels == 0) throw ConfigError("in_channels must be positive");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (classifier_hidden == 0) {
      throw ConfigError("classifier_hidden must be positive");
    }
    if (sal_ratio == 0) throw ConfigError("sal_ratio must be positive");
    if (sal_dilation == 0) throw ConfigError("sal_dilation must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw ConfigError("dropout_rate must be in [0,1)");
    }
    const std::size_t divisor = std::size_t{1} << (channels.size() + 1);
    if (input_size == 0 || input_size % divisor != 0) {
      throw ConfigError("input_size " + std::to_string(input_size) +
                        " must be divisible by " + std::to_string(divisor) +
                        " (one halving per block plus the downsample conv)");
    }
  }
};

// Spatial Attention Layer: squeeze channels, look at a dilated neighborhood,
// project to one channel, gate through a sigmoid, and scale the input by the
// resulting map.
template <typename S>
struct SALayer {
  using Ref = typename Tape<S>::ValueRef;

  Conv2DLayer<S> reduce;    // 1x1, C -> mid
  Conv2DLayer<S> dilated1;  // 3x3 dilated, mid -> mid
  Conv2DLayer<S> dilated2;  // 3x3 dilated, mid -> mid
  Conv2DLayer<S> project;   // 1x1, mid -> 1

  SALayer() = default;
  SALayer(const std::string& name, std::size_t channels, std::size_t ratio,
          std::size_t dilation) {
    const std::size_t mid = mid_channels(channels, ratio);
    reduce = Conv2DLayer<S>(name + ".reduce", mid, channels, ConvSpec::square(1));
    dilated1 =
        Conv2DLayer<S>(name + ".dilated1", mid, mid, ConvSpec::same(3, dilation));
    dilated2 =
        Conv2DLayer<S>(name + ".dilated2", mid, mid, ConvSpec::same(3, dilation));
    project = Conv2DLayer<S>(name + ".project", 1, mid, ConvSpec::square(1));
  }

  // The contract wants C divisible by the reduction ratio; a block whose
  // input is narrower than the ratio (the grayscale stem, C=1) squeezes to a
  // single channel instead, since C/ratio would be zero.
  static std::size_t mid_channels(std::size_t channels, std::size_t ratio) {
    if (channels < ratio) return 1;
    if (channels % ratio != 0) {
      throw ConfigError("SAL input channels " + std::to_string(channels) +
                        " not divisible by reduction ratio " +
                        std::to_string(ratio));
    }
    return channels / ratio;
  }

  struct Result {
    Ref attended;
    std::optional<Ref> map;  // absent when the layer was bypassed
  };

  Result forward(Tape<S>& t, Ref x, bool bypass = false) {
    if (bypass) return {x, std::nullopt};  // map forced to all-ones
    auto squeezed = reduce.forward(t, x);
    auto ctx = dilated2.forward(t, t.relu(dilated1.forward(t, squeezed)));
    auto map = t.sigmoid(project.forward(t, ctx));
    return {t.mul_broadcast(x, map), map};
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(reduce);
    fn(dilated1);
    fn(dilated2);
    fn(project);
  }

  std::size_t num_parameters() const {
    return reduce.num_parameters() + dilated1.num_parameters() +
           dilated2.num_parameters() + project.num_parameters();
  }
};

// One SKIPNet block: an attention sub-block (SAL on the block input, then a
// 1x1 conv matching the output width — the skip path) and a conv sub-block
// (two conv/BN/ReLU units), integrated by addition and max-pooled.
template <typename S>
struct CNNBlock {
  using Ref = typename Tape<S>::ValueRef;

  SALayer<S> sal;
  Conv2DLayer<S> skip;  // 1x1, C_in -> C_out
  Conv2DLayer<S> conv1;
  BatchNorm2DLayer<S> bn1;
  Conv2DLayer<S> conv2;
  BatchNorm2DLayer<S> bn2;

  CNNBlock() = default;
  CNNBlock(const std::string& name, std::size_t c_in, std::size_t c_out,
           std::size_t ratio, std::size_t dilation)
      : sal(name + ".sal", c_in, ratio, dilation),
        skip(name + ".skip", c_out, c_in, ConvSpec::square(1)),
        conv1(name + ".conv1", c_out, c_in, ConvSpec::same(3),
              /*with_bias=*/false),
        bn1(name + ".bn1", c_out),
        conv2(name + ".conv2", c_out, c_out, ConvSpec::same(3),
              /*with_bias=*/false),
        bn2(name + ".bn2", c_out) {}

  struct Result {
    Ref out;
    std::optional<Ref> attention_map;
  };

  Result forward(Tape<S>& t, Ref x, Mode mode, bool bypass_attention = false) {
    const Tensor<S>& xv = t.value(x);
    if (xv.extent(2) % 2 != 0 || xv.extent(3) % 2 != 0) {
      throw ConfigError("block input spatial extents must be even, got " +
                        shape_string(xv.shape()));
    }
    auto attended = sal.forward(t, x, bypass_attention);
    auto skip_out = skip.forward(t, attended.attended);
    auto main = t.relu(bn1.forward(t, conv1.forward(t, x), mode));
    main = t.relu(bn2.forward(t, conv2.forward(t, main), mode));
    auto integrated = t.add(main, skip_out);
    return {t.maxpool2d(integrated, 2, 2, 2, 2), attended.map};
  }

  std::size_t num_parameters() const {
    return sal.num_parameters() + skip.num_parameters() +
           conv1.num_parameters() + bn1.num_parameters() +
           conv2.num_parameters() + bn2.num_parameters();
  }
};

template <typename S>
struct ForwardOptions {
  bool bypass_attention = false;
  // When set, receives one map per SAL (blocks in order, then the final SAL),
  // skipped entirely under bypass_attention.
  std::vector<Tensor<S>>* attention_maps = nullptr;
};

template <typename S>
class SkipNet {
 public:
  using Ref = typename Tape<S>::ValueRef;

  explicit SkipNet(ModelConfig config, std::uint64_t seed = 0)
      : config_(std::move(config)) {
    config_.validate();
    std::size_t c_in = config_.in_channels;
    for (std::size_t i = 0; i < config_.channels.size(); ++i) {
      const std::size_t c_out = config_.channels[i];
      const std::string name = "block" + std::to_string(i + 1);
      blocks_.emplace_back(name, c_in, c_out, config_.sal_ratio,
                           config_.sal_dilation);
      dropouts_.emplace_back(name + ".dropout",
                             static_cast<S>(config_.dropout_rate),
                             Rng(seed).fork(1000 + i));
      c_in = c_out;
    }
    const std::size_t c_last = config_.channels.back();
    downsample_ =
        Conv2DLayer<S>("downsample", c_last, c_last, ConvSpec::square(2, 2));
    final_sal_ = SALayer<S>("final_sal", c_last, config_.sal_ratio,
                            config_.sal_dilation);
    const std::size_t extent = config_.final_extent();
    flat_features_ = c_last * extent * extent;
    fc1_ = DenseLayer<S>("classifier.fc1", config_.classifier_hidden,
                         flat_features_);
    fc2_ = DenseLayer<S>("classifier.fc2", config_.num_classes,
                         config_.classifier_hidden);
    init_parameters(seed);
  }

  // Kaiming-uniform conv/dense weights, zero biases, identity batchnorm.
  // Layer visitation order is fixed, so a seed pins every parameter.
  void init_parameters(std::uint64_t seed) {
    Rng rng(seed);
    visit_layers([&rng](auto& layer) { layer.init(rng); });
    // The logit layer starts a hundred times smaller, so the first epoch
    // begins near the uniform prediction instead of violently correcting
    // confident noise. A full-scale start can slam the attention gates
    // shut (sigmoids saturate at zero) before any signal is learned, which
    // is an absorbing state. Kept nonzero so no gradient path degenerates.
    for (auto& v : fc2_.weight) v *= static_cast<S>(0.01);
    for (auto& d : dropouts_) d.clear_frozen_mask();
  }

  Ref forward(Tape<S>& t, Ref input, Mode mode,
              const ForwardOptions<S>& opts = {}) {
    const Tensor<S>& x = t.value(input);
    detail::expect_rank(x, 4, "model input");
    if (x.extent(1) != config_.in_channels) {
      throw ConfigError("model expects " +
                        std::to_string(config_.in_channels) +
                        " input channels, got " + std::to_string(x.extent(1)));
    }
    if (x.extent(2) != config_.input_size || x.extent(3) != config_.input_size) {
      throw ConfigError("model was built for " +
                        std::to_string(config_.input_size) + "x" +
                        std::to_string(config_.input_size) +
                        " inputs, got " + shape_string(x.shape()));
    }

    Ref h = input;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      auto block_out = blocks_[i].forward(t, h, mode, opts.bypass_attention);
      record_map(t, block_out.attention_map, opts);
      h = dropouts_[i].forward(t, block_out.out, mode);
    }
    h = downsample_.forward(t, h);
    auto attended = final_sal_.forward(t, h, opts.bypass_attention);
    record_map(t, attended.map, opts);
    const std::size_t n = t.value(attended.attended).extent(0);
    auto flat = t.reshape(attended.attended, {n, flat_features_});
    return fc2_.forward(t, t.relu(fc1_.forward(t, flat)));
  }

  Ref forward(Tape<S>& t, const Tensor<S>& input, Mode mode,
              const ForwardOptions<S>& opts = {}) {
    return forward(t, t.leaf(input, "input"), mode, opts);
  }

  // Eval-mode logits on a fresh tape.
  Tensor<S> logits(const Tensor<S>& input,
                   const ForwardOptions<S>& opts = {}) {
    Tape<S> t;
    return t.value(forward(t, input, Mode::Eval, opts));
  }

  // Learnable parameters, in fixed architecture order.
  template <typename Fn>
  void visit_parameters(Fn&& fn) {
    visit_layers([&fn](auto& layer) { visit_layer_params(layer, fn); });
  }

  // Non-learnable state (batchnorm running statistics).
  template <typename Fn>
  void visit_buffers(Fn&& fn) {
    for (auto& block : blocks_) {
      fn(block.bn1.name + ".running_mean", block.bn1.running_mean);
      fn(block.bn1.name + ".running_var", block.bn1.running_var);
      fn(block.bn2.name + ".running_mean", block.bn2.running_mean);
      fn(block.bn2.name + ".running_var", block.bn2.running_var);
    }
  }

  std::size_t num_parameters() const {
    std::size_t total = 0;
    for (const auto& [name, count] : parameter_counts()) total += count;
    return total;
  }

  // Per-component parameter counts, for reporting.
  std::vector<std::pair<std::string, std::size_t>> parameter_counts() const {
    std::vector<std::pair<std::string, std::size_t>> counts;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      counts.emplace_back("block" + std::to_string(i + 1),
                          blocks_[i].num_parameters());
    }
    counts.emplace_back("downsample", downsample_.num_parameters());
    counts.emplace_back("final_sal", final_sal_.num_parameters());
    counts.emplace_back("classifier",
                        fc1_.num_parameters() + fc2_.num_parameters());
    return counts;
  }

  void clear_gradcheck_state() {
    for (auto& d : dropouts_) d.clear_frozen_mask();
  }

  const ModelConfig& config() const { return config_; }
  std::size_t flat_features() const { return flat_features_; }
  std::vector<CNNBlock<S>>& blocks() { return blocks_; }
  SALayer<S>& final_sal() { return final_sal_; }

 private:
  void record_map(Tape<S>& t, const std::optional<Ref>& map,
                  const ForwardOptions<S>& opts) {
    if (opts.attention_maps && map) {
      opts.attention_maps->push_back(t.value(*map));
    }
  }

  template <typename Fn>
  void visit_layers(Fn&& fn) {
    for (auto& block : blocks_) {
      block.sal.visit(fn);
      fn(block.skip);
      fn(block.conv1);
      fn(block.bn1);
      fn(block.conv2);
      fn(block.bn2);
    }
    fn(downsample_);
    final_sal_.visit(fn);
    fn(fc1_);
    fn(fc2_);
  }

  template <typename Layer, typename Fn>
  static void visit_layer_params(Layer& layer, Fn& fn) {
    if constexpr (requires { layer.weight; }) {
      fn(layer.name + ".weight", layer.weight);
      bool with_bias = true;
      if constexpr (requires { layer.has_bias; }) with_bias = layer.has_bias;
      if (with_bias) fn(layer.name + ".bias", layer.bias);
    } else {
      fn(layer.name + ".gamma", layer.gamma);
      fn(layer.name + ".beta", layer.beta);
    }
  }

  ModelConfig config_;
  std::vector<CNNBlock<S>> blocks_;
  std::vector<DropoutLayer<S>> dropouts_;
  Conv2DLayer<S> downsample_;
  SALayer<S> final_sal_;
  DenseLayer<S> fc1_;
  DenseLayer<S> fc2_;
  std::size_t flat_features_ = 0;
};

// Named model state in fixed visitation order: parameters first, then
// batchnorm running statistics. The unit of best-epoch snapshots and of
// checkpoint payloads.
template <typename S>
using NamedTensors = std::vector<std::pair<std::string, Tensor<S>>>;

template <typename S>
NamedTensors<S> snapshot_state(SkipNet<S>& model) {
  NamedTensors<S> state;
  auto take = [&state](const std::string& name, const Tensor<S>& value) {
    state.emplace_back(name, value);
  };
  model.visit_parameters(take);
  model.visit_buffers(take);
  return state;
}

// Installs a snapshot back into the model. The snapshot must cover every
// parameter and buffer the model exposes, with matching shapes; the model is
// not modified until the whole snapshot has been validated.
template <typename S>
void restore_state(SkipNet<S>& model, const NamedTensors<S>& state) {
  std::map<std::string, const Tensor<S>*> by_name;
  for (const auto& [name, value] : state) {
    if (!by_name.emplace(name, &value).second) {
      throw DataError("duplicate tensor '" + name + "' in model state");
    }
  }
  std::vector<std::pair<Tensor<S>*, const Tensor<S>*>> plan;
  std::string problem;
  auto check = [&](const std::string& name, Tensor<S>& dest) {
    if (!problem.empty()) return;
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      problem = "model state is missing tensor '" + name + "'";
      return;
    }
    if (it->second->shape() != dest.shape()) {
      problem = "tensor '" + name + "' has shape " +
                shape_string(it->second->shape()) + ", model expects " +
                shape_string(dest.shape());
      return;
    }
    plan.emplace_back(&dest, it->second);
  };
  model.visit_parameters(check);
  model.visit_buffers(check);
  if (!problem.empty()) throw DataError(problem);
  if (plan.size() != by_name.size()) {
    throw DataError("model state holds " + std::to_string(by_name.size()) +
                    " tensors, model expects " + std::to_string(plan.size()));
  }
  for (auto& [dest, src] : plan) *dest = *src;
}

}  // namespace skipnet
