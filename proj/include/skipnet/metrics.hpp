#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "skipnet/error.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

// K x K count grid; rows index the true class, columns the predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = 3)
      : k_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) {
      throw ConfigError("confusion matrix needs at least one class");
    }
  }

  void add(std::size_t true_label, std::size_t predicted) {
    if (true_label >= k_ || predicted >= k_) {
      throw DataError("confusion matrix label out of range: true=" +
                      std::to_string(true_label) + " predicted=" +
                      std::to_string(predicted) + " with " +
                      std::to_string(k_) + " classes");
    }
    ++counts_[true_label * k_ + predicted];
  }

  std::uint64_t at(std::size_t true_label, std::size_t predicted) const {
    return counts_.at(true_label * k_ + predicted);
  }

  std::size_t num_classes() const { return k_; }

  std::uint64_t total() const {
    std::uint64_t sum = 0;
    for (auto c : counts_) sum += c;
    return sum;
  }

  // Headline multi-class accuracy: trace / total.
  double accuracy() const {
    const std::uint64_t n = total();
    if (n == 0) throw UsageError("accuracy of an empty confusion matrix");
    std::uint64_t trace = 0;
    for (std::size_t i = 0; i < k_; ++i) trace += counts_[i * k_ + i];
    return static_cast<double>(trace) / static_cast<double>(n);
  }

  // One-vs-rest (TP+TN)/total per class. Coincides with accuracy() only in
  // the binary case; reported alongside it, not instead of it.
  std::vector<double> per_class_accuracy() const {
    const std::uint64_t n = total();
    if (n == 0) {
      throw UsageError("per-class accuracy of an empty confusion matrix");
    }
    std::vector<double> out(k_);
    for (std::size_t c = 0; c < k_; ++c) {
      const std::uint64_t tp = counts_[c * k_ + c];
      std::uint64_t row = 0, col = 0;
      for (std::size_t j = 0; j < k_; ++j) {
        row += counts_[c * k_ + j];
        col += counts_[j * k_ + c];
      }
      const std::uint64_t fn = row - tp;
      const std::uint64_t fp = col - tp;
      const std::uint64_t tn = n - tp - fn - fp;
      out[c] = static_cast<double>(tp + tn) / static_cast<double>(n);
    }
    return out;
  }

  // One comma-separated row per true class.
  std::string to_csv() const {
    std::ostringstream os;
    for (std::size_t t = 0; t < k_; ++t) {
      for (std::size_t p = 0; p < k_; ++p) {
        if (p > 0) os << ',';
        os << counts_[t * k_ + p];
      }
      os << '\n';
    }
    return os.str();
  }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

// Argmax over one row of [N, K] logits; ties resolve to the lowest index.
template <typename S>
std::size_t predicted_class(const Tensor<S>& logits, std::size_t row) {
  if (logits.rank() != 2) {
    throw DimensionError("predicted_class expects rank-2 logits, got " +
                         shape_string(logits.shape()));
  }
  const std::size_t k = logits.extent(1);
  if (k == 0 || row >= logits.extent(0)) {
    throw UsageError("predicted_class row " + std::to_string(row) +
                     " out of range for " + shape_string(logits.shape()));
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (logits(row, j) > logits(row, best)) best = j;
  }
  return best;
}

}  // namespace skipnet
