#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "skipnet/error.hpp"

namespace skipnet {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
using MatrixMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Dense N-d array in row-major order; the universal value type for
// activations, parameters and gradients. 4-d activations use NCHW layout:
// flat(n,c,h,w) = ((n*C + c)*H + h)*W + w. The scalar template parameter is
// the dtype tag: float for training, double for gradient checking.
template <typename Scalar>
class Tensor {
  static_assert(std::is_floating_point_v<Scalar>,
                "Tensor supports the 32-bit and 64-bit float modes only");

 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(element_count(shape_), Scalar(0)) {}

  Tensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }

  // Rank-1 scalar holder, used for losses.
  static Tensor scalar(Scalar v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return data_[flat_index(ix...)];
  }
  template <typename... Ix>
  const Scalar& operator()(Ix... ix) const {
    return data_[flat_index(ix...)];
  }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const Scalar v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  // 2-d Eigen view over the flat buffer; rows*cols must cover it exactly.
  MatrixMap<Scalar> matrix(std::size_t rows, std::size_t cols) {
    check_view(rows, cols);
    return MatrixMap<Scalar>(data_.data(), static_cast<Eigen::Index>(rows),
                             static_cast<Eigen::Index>(cols));
  }
  ConstMatrixMap<Scalar> matrix(std::size_t rows, std::size_t cols) const {
    check_view(rows, cols);
    return ConstMatrixMap<Scalar>(data_.data(), static_cast<Eigen::Index>(rows),
                                  static_cast<Eigen::Index>(cols));
  }

  static std::size_t element_count(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                           std::multiplies<>());
  }

 private:
  template <typename... Ix>
  std::size_t flat_index(Ix... ix) const {
    constexpr std::size_t n = sizeof...(Ix);
    const std::array<std::size_t, n> idx{static_cast<std::size_t>(ix)...};
    std::size_t flat = 0;
    for (std::size_t axis = 0; axis < n; ++axis) {
      flat = flat * shape_[axis] + idx[axis];
    }
    return flat;
  }

  void check_view(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size()) {
      throw DimensionError("matrix view " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " does not cover tensor " +
                           shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(data));
}

}  // namespace skipnet
