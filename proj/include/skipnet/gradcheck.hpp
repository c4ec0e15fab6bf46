#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "skipnet/autodiff.hpp"
#include "skipnet/error.hpp"
#include "skipnet/model.hpp"
#include "skipnet/rng.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

struct GradCheckOptions {
  double step = 1e-5;
  double threshold = 1e-4;
  std::size_t max_samples_per_tensor = 64;
  std::uint64_t sample_seed = 1234;
  // Central differences at step h resolve a gradient down to roughly
  // ulp(loss)/(2h) — about 1e-11 here — while the rel-err denominator floor
  // is 1e-8. A coordinate whose true gradient sits below measurability would
  // therefore score pure roundoff noise as a ~1e-3 relative error. When both
  // the analytic and the numeric value fall below this floor the comparison
  // carries no information and is skipped (counted per entry); a wiring bug
  // still surfaces, because it leaves a measurable value on at least one
  // side. Raising the step instead does not help: larger steps cross
  // ReLU/maxpool kinks and the error explodes.
  double measurable_floor = 1e-6;
  // Test fixture: adds a constant to one analytic gradient so the check must
  // fail. Exists so the failure path itself is testable end to end.
  bool corrupt_backward = false;
};

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    // Sampled coordinates where both sides were below the measurable floor.
    std::size_t unmeasurable = 0;
  };
  std::vector<Entry> entries;
  double step = 0.0;
  double threshold = 0.0;
  double max_rel_err = 0.0;
  bool passed = false;
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Distinct sample positions inside a tensor of `size` elements. Exhaustive
// when the tensor is small enough; otherwise a seeded draw without
// replacement, so repeated runs check identical coordinates.
inline std::vector<std::size_t> sample_indices(std::size_t size,
                                               std::size_t max_samples,
                                               Rng& rng) {
  std::vector<std::size_t> indices(size);
  for (std::size_t i = 0; i < size; ++i) indices[i] = i;
  if (size <= max_samples) return indices;
  for (std::size_t i = 0; i < max_samples; ++i) {
    const std::size_t j = i + rng.uniform_int(size - i);
    std::swap(indices[i], indices[j]);
  }
  indices.resize(max_samples);
  return indices;
}

}  // namespace detail

// Core checker over an arbitrary parameter set: `loss_fn()` must evaluate the
// scalar loss reading the current parameter tensors; `grads` are the analytic
// gradients keyed by the same names. Central differences, sampled per tensor.
template <typename LossFn>
GradCheckReport gradcheck_core(
    const std::vector<std::pair<std::string, Tensor<double>*>>& params,
    const std::map<std::string, Tensor<double>>& grads, LossFn&& loss_fn,
    const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  report.step = opts.step;
  report.threshold = opts.threshold;
  Rng rng(opts.sample_seed);
  for (const auto& [name, tensor] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) {
      throw UsageError("no analytic gradient for parameter '" + name + "'");
    }
    const Tensor<double>& analytic = it->second;
    typename GradCheckReport::Entry entry;
    entry.name = name;
    const auto indices =
        detail::sample_indices(tensor->size(), opts.max_samples_per_tensor, rng);
    for (std::size_t idx : indices) {
      const double orig = (*tensor)[idx];
      (*tensor)[idx] = orig + opts.step;
      const double up = loss_fn();
      (*tensor)[idx] = orig - opts.step;
      const double down = loss_fn();
      (*tensor)[idx] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      if (std::abs(analytic[idx]) < opts.measurable_floor &&
          std::abs(numeric) < opts.measurable_floor) {
        ++entry.unmeasurable;
        continue;
      }
      entry.max_rel_err =
          std::max(entry.max_rel_err, detail::rel_err(analytic[idx], numeric));
    }
    entry.checked = indices.size();
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_err < report.threshold;
  return report;
}

// Full-model gradient check against the cross-entropy loss. Runs the model
// in GradCheck mode: batch statistics like training, dropout masks frozen
// after the first forward, running stats untouched — the loss is then a
// deterministic function of the parameters alone.
template <typename S>
GradCheckReport gradcheck(SkipNet<S>& model, const Tensor<S>& input,
                          const std::vector<std::size_t>& labels,
                          const GradCheckOptions& opts = {}) {
  if constexpr (!std::is_same_v<S, double>) {
    throw UsageError(
        "gradient checking requires the 64-bit tensor mode; finite "
        "differences are unreliable at 32-bit precision");
  } else {
    model.clear_gradcheck_state();
    auto loss_fn = [&]() {
      Tape<double> t;
      auto logits = model.forward(t, input, Mode::GradCheck);
      return t.value(t.sparse_ce(logits, labels))[0];
    };
    // Prime the frozen dropout masks, then take the analytic gradients of
    // the exact function finite differences will probe.
    loss_fn();
    Tape<double> t;
    auto logits = model.forward(t, input, Mode::GradCheck);
    auto grads = t.backward(t.sparse_ce(logits, labels));
    std::vector<std::pair<std::string, Tensor<double>*>> params;
    model.visit_parameters([&params](const std::string& name,
                                     Tensor<double>& tensor) {
      params.emplace_back(name, &tensor);
    });
    if (opts.corrupt_backward && !params.empty()) {
      grads.at(params.front().first)[0] += 1.0;
    }
    return gradcheck_core(params, grads, loss_fn, opts);
  }
}

}  // namespace skipnet
