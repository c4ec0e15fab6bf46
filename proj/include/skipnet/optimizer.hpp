#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skipnet/error.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

enum class OptimizerKind { Adam, Sgd };

inline const char* optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

inline OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.0;  // SGD only

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning rate must be finite and non-negative");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw ConfigError("momentum must lie in [0, 1)");
    }
  }
};

// Adam (bias-corrected first/second moments) or SGD with optional momentum.
// One instance owns the moment state for a whole parameter set, keyed by
// parameter name; shapes are pinned on first sight.
template <typename S>
class Optimizer {
 public:
  struct Update {
    std::string name;
    Tensor<S>* param;
    const Tensor<S>* grad;
  };

  // Per-parameter state: Adam uses both slots (m, v); SGD-with-momentum uses
  // only the first (velocity).
  struct Slot {
    Tensor<S> m;
    Tensor<S> v;
  };

  explicit Optimizer(OptimizerConfig config) : cfg_(config) {
    cfg_.validate();
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_; }

  // One optimizer step over the full parameter set. Every tensor moves under
  // the same bias-correction counter, so call this once per minibatch.
  void step(const std::vector<Update>& updates) {
    ++step_;
    for (const auto& u : updates) apply(u);
  }

  // State access for serialization. Slots appear in first-seen order.
  template <typename Fn>
  void visit_state(Fn&& fn) {
    for (auto& name : slot_order_) {
      Slot& slot = slots_.at(name);
      fn(name + ".m", slot.m);
      if (cfg_.kind == OptimizerKind::Adam) fn(name + ".v", slot.v);
    }
  }

  void set_step_count(std::uint64_t step) { step_ = step; }

  // Reinstalls one serialized slot tensor ("<param>.m" / "<param>.v").
  void restore_state(const std::string& key, Tensor<S> value) {
    const auto dot = key.rfind('.');
    const std::string suffix = dot == std::string::npos ? "" : key.substr(dot);
    if (suffix != ".m" && suffix != ".v") {
      throw DataError("unrecognized optimizer state key '" + key + "'");
    }
    const std::string name = key.substr(0, dot);
    auto [it, inserted] = slots_.try_emplace(name);
    if (inserted) slot_order_.push_back(name);
    (suffix == ".m" ? it->second.m : it->second.v) = std::move(value);
  }

 private:
  void apply(const Update& u) {
    Tensor<S>& p = *u.param;
    const Tensor<S>& g = *u.grad;
    if (g.shape() != p.shape()) {
      throw DimensionError("gradient shape " + shape_string(g.shape()) +
                           " does not match parameter '" + u.name + "' " +
                           shape_string(p.shape()));
    }
    Slot& slot = ensure_slot(u.name, p);
    const S lr = static_cast<S>(cfg_.learning_rate);
    if (cfg_.kind == OptimizerKind::Sgd) {
      if (cfg_.momentum == 0.0) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        return;
      }
      const S mu = static_cast<S>(cfg_.momentum);
      for (std::size_t i = 0; i < p.size(); ++i) {
        slot.m[i] = mu * slot.m[i] + g[i];
        p[i] -= lr * slot.m[i];
      }
      return;
    }
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S eps = static_cast<S>(cfg_.eps);
    const S bc1 = S(1) - static_cast<S>(
        std::pow(cfg_.beta1, static_cast<double>(step_)));
    const S bc2 = S(1) - static_cast<S>(
        std::pow(cfg_.beta2, static_cast<double>(step_)));
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = b1 * slot.m[i] + (S(1) - b1) * g[i];
      slot.v[i] = b2 * slot.v[i] + (S(1) - b2) * g[i] * g[i];
      const S m_hat = slot.m[i] / bc1;
      const S v_hat = slot.v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }

  Slot& ensure_slot(const std::string& name, const Tensor<S>& p) {
    auto [it, inserted] = slots_.try_emplace(name);
    if (inserted) slot_order_.push_back(name);
    Slot& slot = it->second;
    if (slot.m.size() == 0) slot.m = Tensor<S>::zeros(p.shape());
    if (slot.v.size() == 0 && cfg_.kind == OptimizerKind::Adam) {
      slot.v = Tensor<S>::zeros(p.shape());
    }
    if (slot.m.shape() != p.shape() ||
        (cfg_.kind == OptimizerKind::Adam && slot.v.shape() != p.shape())) {
      throw DimensionError("optimizer state for '" + name +
                           "' has shape inconsistent with parameter " +
                           shape_string(p.shape()));
    }
    return slot;
  }

  OptimizerConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, Slot> slots_;
  std::vector<std::string> slot_order_;
};

}  // namespace skipnet
