#pragma once

// Brute-force reference kernels for the test suite. These are written as
// direct transcriptions of the operator definitions — quadruple loops, no
// im2col, no Eigen — so they can serve as independent oracles for the
// optimized implementations.

#include <cmath>
#include <cstddef>
#include <vector>

#include "skipnet/ops.hpp"
#include "skipnet/tensor.hpp"

namespace oracle {

using skipnet::ConvSpec;
using skipnet::Tensor;

template <typename S>
Tensor<S> conv2d_ref(const Tensor<S>& x, const Tensor<S>& w,
                     const Tensor<S>& b, const ConvSpec& spec) {
  const std::size_t n = x.extent(0), c_in = x.extent(1), h = x.extent(2),
                    wd = x.extent(3);
  const std::size_t c_out = w.extent(0), kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t out_h =
      (h + 2 * spec.pad_h - (spec.dilation_h * (kh - 1) + 1)) / spec.stride_h + 1;
  const std::size_t out_w =
      (wd + 2 * spec.pad_w - (spec.dilation_w * (kw - 1) + 1)) / spec.stride_w + 1;
  Tensor<S> out({n, c_out, out_h, out_w});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t xo = 0; xo < out_w; ++xo) {
          S acc = b[o];
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const std::ptrdiff_t in_y =
                    static_cast<std::ptrdiff_t>(y * spec.stride_h +
                                                i * spec.dilation_h) -
                    static_cast<std::ptrdiff_t>(spec.pad_h);
                const std::ptrdiff_t in_x =
                    static_cast<std::ptrdiff_t>(xo * spec.stride_w +
                                                j * spec.dilation_w) -
                    static_cast<std::ptrdiff_t>(spec.pad_w);
                if (in_y < 0 || in_y >= static_cast<std::ptrdiff_t>(h) ||
                    in_x < 0 || in_x >= static_cast<std::ptrdiff_t>(wd)) {
                  continue;
                }
                acc += x(in, c, static_cast<std::size_t>(in_y),
                         static_cast<std::size_t>(in_x)) *
                       w(o, c, i, j);
              }
          out(in, o, y, xo) = acc;
        }
  return out;
}

template <typename S>
Tensor<S> maxpool2d_ref(const Tensor<S>& x, std::size_t wh, std::size_t ww,
                        std::size_t sh, std::size_t sw) {
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2),
                    w = x.extent(3);
  const std::size_t out_h = (h - wh) / sh + 1;
  const std::size_t out_w = (w - ww) / sw + 1;
  Tensor<S> out({n, c, out_h, out_w});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t ic = 0; ic < c; ++ic)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t xo = 0; xo < out_w; ++xo) {
          S best = x(in, ic, y * sh, xo * sw);
          for (std::size_t i = 0; i < wh; ++i)
            for (std::size_t j = 0; j < ww; ++j)
              best = std::max(best, x(in, ic, y * sh + i, xo * sw + j));
          out(in, ic, y, xo) = best;
        }
  return out;
}

template <typename S>
Tensor<S> dense_ref(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  const std::size_t n = x.extent(0), f_in = x.extent(1), f_out = w.extent(0);
  Tensor<S> out({n, f_out});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < f_out; ++o) {
      S acc = b[o];
      for (std::size_t f = 0; f < f_in; ++f) acc += x(r, f) * w(o, f);
      out(r, o) = acc;
    }
  return out;
}

template <typename S>
Tensor<S> softmax_ref(const Tensor<S>& x) {
  const std::size_t n = x.extent(0), k = x.extent(1);
  Tensor<S> out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    S mx = x(r, std::size_t{0});
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, x(r, i));
    S sum = S(0);
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(x(r, i) - mx);
    for (std::size_t i = 0; i < k; ++i) out(r, i) = std::exp(x(r, i) - mx) / sum;
  }
  return out;
}

// Mean sparse categorical cross-entropy over the batch, computed the
// straightforward way (softmax then -log p[target]).
template <typename S>
S sparse_ce_ref(const Tensor<S>& logits, const std::vector<std::size_t>& labels) {
  const Tensor<S> p = softmax_ref(logits);
  const std::size_t n = logits.extent(0);
  S total = S(0);
  for (std::size_t r = 0; r < n; ++r) total += -std::log(p(r, labels[r]));
  return total / static_cast<S>(n);
}

template <typename S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  S worst = S(0);
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace oracle
