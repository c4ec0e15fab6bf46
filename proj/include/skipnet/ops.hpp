#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "skipnet/error.hpp"
#include "skipnet/parallel.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

// Convolution hyperparameters. Padding is symmetric zero padding.
struct ConvSpec {
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t dilation_h = 1, dilation_w = 1;

  static ConvSpec square(std::size_t kernel, std::size_t stride = 1,
                         std::size_t pad = 0, std::size_t dilation = 1) {
    return ConvSpec{kernel, kernel, stride, stride, pad, pad, dilation, dilation};
  }

  // Stride-1 spec that preserves H and W: pad = dilation*(kernel-1)/2.
  // Requires an odd kernel so the padding is symmetric.
  static ConvSpec same(std::size_t kernel, std::size_t dilation = 1) {
    if (kernel % 2 == 0) {
      throw ConfigError("same-padding requires an odd kernel, got " +
                        std::to_string(kernel));
    }
    const std::size_t pad = dilation * (kernel - 1) / 2;
    return ConvSpec{kernel, kernel, 1, 1, pad, pad, dilation, dilation};
  }

  void validate() const {
    if (kernel_h == 0 || kernel_w == 0 || stride_h == 0 || stride_w == 0 ||
        dilation_h == 0 || dilation_w == 0) {
      throw ConfigError("conv spec requires positive kernel, stride, dilation");
    }
  }

  std::size_t out_h(std::size_t in_h) const {
    return out_extent(in_h, kernel_h, stride_h, pad_h, dilation_h, "height");
  }
  std::size_t out_w(std::size_t in_w) const {
    return out_extent(in_w, kernel_w, stride_w, pad_w, dilation_w, "width");
  }

  static std::size_t out_extent(std::size_t in, std::size_t kernel,
                                std::size_t stride, std::size_t pad,
                                std::size_t dilation, const char* axis) {
    const std::size_t effective = dilation * (kernel - 1) + 1;
    if (in + 2 * pad < effective) {
      throw ConfigError(std::string("conv output ") + axis +
                        " would be non-positive: input " + std::to_string(in) +
                        ", effective kernel " + std::to_string(effective) +
                        ", pad " + std::to_string(pad));
    }
    return (in + 2 * pad - effective) / stride + 1;
  }
};

namespace detail {

template <typename S>
void expect_rank(const Tensor<S>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " must have rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

template <typename S>
void ensure_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// Unrolls the receptive field of every output position into a column matrix
// col[C*kh*kw, H_out*W_out] (row-major). Out-of-bounds taps read as zero.
template <typename S>
void im2col(const S* x, std::size_t channels, std::size_t h, std::size_t w,
            const ConvSpec& spec, std::size_t out_h, std::size_t out_w,
            S* col) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(w);
  S* dst = col;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < spec.kernel_h; ++i) {
      for (std::size_t j = 0; j < spec.kernel_w; ++j) {
        const std::ptrdiff_t off_y =
            static_cast<std::ptrdiff_t>(i * spec.dilation_h) -
            static_cast<std::ptrdiff_t>(spec.pad_h);
        const std::ptrdiff_t off_x =
            static_cast<std::ptrdiff_t>(j * spec.dilation_w) -
            static_cast<std::ptrdiff_t>(spec.pad_w);
        for (std::size_t y = 0; y < out_h; ++y) {
          const std::ptrdiff_t in_y =
              static_cast<std::ptrdiff_t>(y * spec.stride_h) + off_y;
          if (in_y < 0 || in_y >= ih) {
            for (std::size_t xo = 0; xo < out_w; ++xo) *dst++ = S(0);
            continue;
          }
          const S* row = x + (c * h + static_cast<std::size_t>(in_y)) * w;
          for (std::size_t xo = 0; xo < out_w; ++xo) {
            const std::ptrdiff_t in_x =
                static_cast<std::ptrdiff_t>(xo * spec.stride_w) + off_x;
            *dst++ = (in_x >= 0 && in_x < iw)
                         ? row[static_cast<std::size_t>(in_x)]
                         : S(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the image.
template <typename S>
void col2im_add(const S* col, std::size_t channels, std::size_t h,
                std::size_t w, const ConvSpec& spec, std::size_t out_h,
                std::size_t out_w, S* x) {
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(w);
  const S* src = col;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < spec.kernel_h; ++i) {
      for (std::size_t j = 0; j < spec.kernel_w; ++j) {
        const std::ptrdiff_t off_y =
            static_cast<std::ptrdiff_t>(i * spec.dilation_h) -
            static_cast<std::ptrdiff_t>(spec.pad_h);
        const std::ptrdiff_t off_x =
            static_cast<std::ptrdiff_t>(j * spec.dilation_w) -
            static_cast<std::ptrdiff_t>(spec.pad_w);
        for (std::size_t y = 0; y < out_h; ++y) {
          const std::ptrdiff_t in_y =
              static_cast<std::ptrdiff_t>(y * spec.stride_h) + off_y;
          if (in_y < 0 || in_y >= ih) {
            src += out_w;
            continue;
          }
          S* row = x + (c * h + static_cast<std::size_t>(in_y)) * w;
          for (std::size_t xo = 0; xo < out_w; ++xo) {
            const std::ptrdiff_t in_x =
                static_cast<std::ptrdiff_t>(xo * spec.stride_w) + off_x;
            if (in_x >= 0 && in_x < iw) {
              row[static_cast<std::size_t>(in_x)] += *src;
            }
            ++src;
          }
        }
      }
    }
  }
}

}  // namespace detail

// out[n,o,y,x] = bias[o]
//   + sum_{c,i,j} input[n,c, y*s-p+i*d, x*s-p+j*d] * weight[o,c,i,j]
// with out-of-bounds reads contributing zero. Implemented as a per-sample
// im2col + GEMM; the nested-loop oracle in the test suite is normative.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 const ConvSpec& spec) {
  spec.validate();
  detail::expect_rank(x, 4, "conv2d input");
  detail::expect_rank(w, 4, "conv2d weight");
  detail::expect_rank(b, 1, "conv2d bias");
  const std::size_t n = x.extent(0), c_in = x.extent(1), h = x.extent(2),
                    wd = x.extent(3);
  const std::size_t c_out = w.extent(0);
  if (w.extent(1) != c_in) {
    throw DimensionError("conv2d: weight axis 1 (" + std::to_string(w.extent(1)) +
                         ") does not match input channels axis 1 (" +
                         std::to_string(c_in) + ")");
  }
  if (w.extent(2) != spec.kernel_h || w.extent(3) != spec.kernel_w) {
    throw DimensionError("conv2d: weight axes 2,3 " +
                         shape_string({w.extent(2), w.extent(3)}) +
                         " do not match kernel spec " +
                         shape_string({spec.kernel_h, spec.kernel_w}));
  }
  if (b.extent(0) != c_out) {
    throw DimensionError("conv2d: bias axis 0 (" + std::to_string(b.extent(0)) +
                         ") does not match output channels (" +
                         std::to_string(c_out) + ")");
  }
  const std::size_t out_h = spec.out_h(h);
  const std::size_t out_w = spec.out_w(wd);
  const std::size_t k = c_in * spec.kernel_h * spec.kernel_w;
  const std::size_t hw = out_h * out_w;

  Tensor<S> out({n, c_out, out_h, out_w});
  ConstMatrixMap<S> wmat(w.data(), static_cast<Eigen::Index>(c_out),
                         static_cast<Eigen::Index>(k));
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<S> col(k * hw);
    for (std::size_t i = begin; i < end; ++i) {
      detail::im2col(x.data() + i * c_in * h * wd, c_in, h, wd, spec, out_h,
                     out_w, col.data());
      ConstMatrixMap<S> colm(col.data(), static_cast<Eigen::Index>(k),
                             static_cast<Eigen::Index>(hw));
      MatrixMap<S> outm(out.data() + i * c_out * hw,
                        static_cast<Eigen::Index>(c_out),
                        static_cast<Eigen::Index>(hw));
      outm.noalias() = wmat * colm;
      for (std::size_t o = 0; o < c_out; ++o) {
        outm.row(static_cast<Eigen::Index>(o)).array() += b[o];
      }
    }
  });
  detail::ensure_finite(out, "conv2d");
  return out;
}

template <typename S>
struct PoolResult {
  Tensor<S> values;
  // Flat index into the input tensor of each window maximum; ties keep the
  // lowest flat index. Saved for backprop.
  std::vector<std::size_t> argmax;
};

template <typename S>
PoolResult<S> maxpool2d(const Tensor<S>& x, std::size_t window_h,
                        std::size_t window_w, std::size_t stride_h,
                        std::size_t stride_w) {
  detail::expect_rank(x, 4, "maxpool2d input");
  if (window_h == 0 || window_w == 0 || stride_h == 0 || stride_w == 0) {
    throw ConfigError("maxpool2d requires positive window and stride");
  }
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2),
                    w = x.extent(3);
  if (window_h > h || window_w > w) {
    throw ConfigError("maxpool2d window " + shape_string({window_h, window_w}) +
                      " larger than input " + shape_string({h, w}));
  }
  const std::size_t out_h = (h - window_h) / stride_h + 1;
  const std::size_t out_w = (w - window_w) / stride_w + 1;

  PoolResult<S> result{Tensor<S>({n, c, out_h, out_w}),
                       std::vector<std::size_t>(n * c * out_h * out_w)};
  std::size_t flat_out = 0;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t ic = 0; ic < c; ++ic) {
      const S* plane = x.data() + (in * c + ic) * h * w;
      const std::size_t plane_base = (in * c + ic) * h * w;
      for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t xo = 0; xo < out_w; ++xo) {
          const std::size_t y0 = y * stride_h, x0 = xo * stride_w;
          S best = plane[y0 * w + x0];
          std::size_t best_idx = y0 * w + x0;
          for (std::size_t i = 0; i < window_h; ++i) {
            for (std::size_t j = 0; j < window_w; ++j) {
              const std::size_t idx = (y0 + i) * w + (x0 + j);
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          result.values[flat_out] = best;
          result.argmax[flat_out] = plane_base + best_idx;
          ++flat_out;
        }
      }
    }
  }
  detail::ensure_finite(result.values, "maxpool2d");
  return result;
}

// out[n,o] = bias[o] + sum_f input[n,f] * weight[o,f]
template <typename S>
Tensor<S> dense(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  detail::expect_rank(x, 2, "dense input");
  detail::expect_rank(w, 2, "dense weight");
  detail::expect_rank(b, 1, "dense bias");
  const std::size_t n = x.extent(0), f_in = x.extent(1);
  const std::size_t f_out = w.extent(0);
  if (w.extent(1) != f_in) {
    throw DimensionError("dense: weight axis 1 (" + std::to_string(w.extent(1)) +
                         ") does not match input features axis 1 (" +
                         std::to_string(f_in) + ")");
  }
  if (b.extent(0) != f_out) {
    throw DimensionError("dense: bias axis 0 does not match output features");
  }
  Tensor<S> out({n, f_out});
  out.matrix(n, f_out).noalias() = x.matrix(n, f_in) * w.matrix(f_out, f_in).transpose();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < f_out; ++o) out(r, o) += b[o];
  }
  detail::ensure_finite(out, "dense");
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
  detail::ensure_finite(out, "relu");
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = S(1) / (S(1) + std::exp(-x[i]));
  }
  detail::ensure_finite(out, "sigmoid");
  return out;
}

// Row-wise softmax with max subtraction so large logits stay finite.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  detail::expect_rank(x, 2, "softmax input");
  const std::size_t n = x.extent(0), k = x.extent(1);
  Tensor<S> out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const S* row = x.data() + r * k;
    S* dst = out.data() + r * k;
    S mx = row[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    S sum = S(0);
    for (std::size_t i = 0; i < k; ++i) {
      dst[i] = std::exp(row[i] - mx);
      sum += dst[i];
    }
    for (std::size_t i = 0; i < k; ++i) dst[i] /= sum;
  }
  detail::ensure_finite(out, "softmax");
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("elementwise add requires identical shapes, got " +
                         shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  detail::ensure_finite(out, "add");
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("elementwise mul requires identical shapes, got " +
                         shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  detail::ensure_finite(out, "mul");
  return out;
}

// Broadcast of a single-channel map over all C channels:
// out[n,c,h,w] = a[n,c,h,w] * m[n,0,h,w]. This is the only broadcast form
// the library supports.
template <typename S>
Tensor<S> mul_broadcast(const Tensor<S>& a, const Tensor<S>& m) {
  detail::expect_rank(a, 4, "mul_broadcast input");
  detail::expect_rank(m, 4, "mul_broadcast map");
  const std::size_t n = a.extent(0), c = a.extent(1), h = a.extent(2),
                    w = a.extent(3);
  if (m.extent(0) != n || m.extent(1) != 1 || m.extent(2) != h ||
      m.extent(3) != w) {
    throw DimensionError("mul_broadcast map must be " +
                         shape_string({n, 1, h, w}) + ", got " +
                         shape_string(m.shape()));
  }
  Tensor<S> out(a.shape());
  const std::size_t plane = h * w;
  for (std::size_t in = 0; in < n; ++in) {
    const S* map = m.data() + in * plane;
    for (std::size_t ic = 0; ic < c; ++ic) {
      const S* src = a.data() + (in * c + ic) * plane;
      S* dst = out.data() + (in * c + ic) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * map[i];
    }
  }
  detail::ensure_finite(out, "mul_broadcast");
  return out;
}

template <typename S>
S sum_all(const Tensor<S>& t) {
  S total = S(0);
  for (std::size_t i = 0; i < t.size(); ++i) total += t[i];
  return total;
}

}  // namespace skipnet
