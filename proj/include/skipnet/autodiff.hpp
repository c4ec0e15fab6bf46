#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skipnet/error.hpp"
#include "skipnet/ops.hpp"
#include "skipnet/tensor.hpp"

namespace skipnet {

// Define-by-run tape. Each op records its output as a new node together with
// a closure that scatters the output gradient back onto the op's inputs.
// Nodes are created in topological order by construction, so one reverse
// sweep from the loss visits every dependency after all of its consumers.
//
// A tape is single-threaded; gradients of nodes the loss does not reach stay
// exactly zero. Running backward twice produces identical gradients (grads
// are re-zeroed each pass).
template <typename S>
class Tape {
 public:
  struct ValueRef {
    std::size_t id = static_cast<std::size_t>(-1);
  };

  struct BatchStats {
    Tensor<S> mean;          // per-channel batch mean
    Tensor<S> var_biased;    // divide by M (used for normalization)
    Tensor<S> var_unbiased;  // divide by M-1 (used for running estimates)
  };

  // Leaf holding a constant (input batch, labels as tensors, fixed masks).
  ValueRef leaf(Tensor<S> v, std::string name = "") {
    return push(std::move(v), name.empty() ? auto_name("leaf") : std::move(name),
                {}, nullptr);
  }

  // Leaf registered under a name; backward() reports its gradient.
  ValueRef parameter(Tensor<S> v, std::string name) {
    if (name.empty()) throw UsageError("parameter requires a non-empty name");
    ValueRef ref = push(std::move(v), name, {}, nullptr);
    params_.emplace_back(nodes_[ref.id].name, ref.id);
    return ref;
  }

  const Tensor<S>& value(ValueRef ref) const { return at(ref).value; }
  const Tensor<S>& grad(ValueRef ref) const { return at(ref).grad; }
  std::size_t node_count() const { return nodes_.size(); }

  ValueRef conv2d(ValueRef x, ValueRef w, ValueRef b, const ConvSpec& spec) {
    Tensor<S> out = skipnet::conv2d(at(x).value, at(w).value, at(b).value, spec);
    ValueRef ref = push(std::move(out), auto_name("conv2d"), {x.id, w.id, b.id},
                        nullptr);
    set_backprop(ref, [x, w, b, ref, spec](Tape& t) {
      const Tensor<S>& xv = t.at(x).value;
      const Tensor<S>& wv = t.at(w).value;
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      Tensor<S>& dw = t.at(w).grad;
      Tensor<S>& db = t.at(b).grad;
      const std::size_t n = xv.extent(0), c_in = xv.extent(1),
                        h = xv.extent(2), wd = xv.extent(3);
      const std::size_t c_out = wv.extent(0);
      const std::size_t out_h = dy.extent(2), out_w = dy.extent(3);
      const std::size_t k = c_in * spec.kernel_h * spec.kernel_w;
      const std::size_t hw = out_h * out_w;

      ConstMatrixMap<S> wmat(wv.data(), static_cast<Eigen::Index>(c_out),
                             static_cast<Eigen::Index>(k));
      MatrixMap<S> dwmat(dw.data(), static_cast<Eigen::Index>(c_out),
                         static_cast<Eigen::Index>(k));
      // Sequential over samples: the dW/db reduction order is then fixed
      // regardless of the configured thread count (bitwise determinism).
      std::vector<S> col(k * hw), dcol(k * hw);
      for (std::size_t i = 0; i < n; ++i) {
        detail::im2col(xv.data() + i * c_in * h * wd, c_in, h, wd, spec, out_h,
                       out_w, col.data());
        ConstMatrixMap<S> colm(col.data(), static_cast<Eigen::Index>(k),
                               static_cast<Eigen::Index>(hw));
        ConstMatrixMap<S> dym(dy.data() + i * c_out * hw,
                              static_cast<Eigen::Index>(c_out),
                              static_cast<Eigen::Index>(hw));
        dwmat.noalias() += dym * colm.transpose();
        // Scalar loop, not an Eigen redux: redux peeling depends on buffer
        // alignment, which would break bitwise reproducibility of gradients.
        const S* dyp = dy.data() + i * c_out * hw;
        for (std::size_t o = 0; o < c_out; ++o) {
          S acc = S(0);
          for (std::size_t j = 0; j < hw; ++j) acc += dyp[o * hw + j];
          db[o] += acc;
        }
        MatrixMap<S> dcolm(dcol.data(), static_cast<Eigen::Index>(k),
                           static_cast<Eigen::Index>(hw));
        dcolm.noalias() = wmat.transpose() * dym;
        detail::col2im_add(dcol.data(), c_in, h, wd, spec, out_h, out_w,
                           dx.data() + i * c_in * h * wd);
      }
    });
    return ref;
  }

  ValueRef maxpool2d(ValueRef x, std::size_t window_h, std::size_t window_w,
                     std::size_t stride_h, std::size_t stride_w) {
    PoolResult<S> pooled = skipnet::maxpool2d(at(x).value, window_h, window_w,
                                              stride_h, stride_w);
    ValueRef ref =
        push(std::move(pooled.values), auto_name("maxpool2d"), {x.id}, nullptr);
    set_backprop(ref, [x, ref, argmax = std::move(pooled.argmax)](Tape& t) {
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
    });
    return ref;
  }

  ValueRef dense(ValueRef x, ValueRef w, ValueRef b) {
    Tensor<S> out = skipnet::dense(at(x).value, at(w).value, at(b).value);
    ValueRef ref =
        push(std::move(out), auto_name("dense"), {x.id, w.id, b.id}, nullptr);
    set_backprop(ref, [x, w, b, ref](Tape& t) {
      const Tensor<S>& xv = t.at(x).value;
      const Tensor<S>& wv = t.at(w).value;
      const Tensor<S>& dy = t.at(ref).grad;
      const std::size_t n = xv.extent(0), f_in = xv.extent(1),
                        f_out = wv.extent(0);
      t.at(x).grad.matrix(n, f_in).noalias() +=
          ConstMatrixMap<S>(dy.data(), static_cast<Eigen::Index>(n),
                            static_cast<Eigen::Index>(f_out)) *
          wv.matrix(f_out, f_in);
      t.at(w).grad.matrix(f_out, f_in).noalias() +=
          ConstMatrixMap<S>(dy.data(), static_cast<Eigen::Index>(n),
                            static_cast<Eigen::Index>(f_out))
              .transpose() *
          xv.matrix(n, f_in);
      Tensor<S>& db = t.at(b).grad;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < f_out; ++o) db[o] += dy[r * f_out + o];
    });
    return ref;
  }

  ValueRef relu(ValueRef x) {
    Tensor<S> out = skipnet::relu(at(x).value);
    ValueRef ref = push(std::move(out), auto_name("relu"), {x.id}, nullptr);
    set_backprop(ref, [x, ref](Tape& t) {
      const Tensor<S>& xv = t.at(x).value;
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      for (std::size_t i = 0; i < xv.size(); ++i)
        if (xv[i] > S(0)) dx[i] += dy[i];
    });
    return ref;
  }

  ValueRef sigmoid(ValueRef x) {
    Tensor<S> out = skipnet::sigmoid(at(x).value);
    ValueRef ref = push(std::move(out), auto_name("sigmoid"), {x.id}, nullptr);
    set_backprop(ref, [x, ref](Tape& t) {
      const Tensor<S>& y = t.at(ref).value;
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      for (std::size_t i = 0; i < y.size(); ++i)
        dx[i] += dy[i] * y[i] * (S(1) - y[i]);
    });
    return ref;
  }

  ValueRef add(ValueRef a, ValueRef b) {
    Tensor<S> out = skipnet::add(at(a).value, at(b).value);
    ValueRef ref = push(std::move(out), auto_name("add"), {a.id, b.id}, nullptr);
    set_backprop(ref, [a, b, ref](Tape& t) {
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& da = t.at(a).grad;
      Tensor<S>& db = t.at(b).grad;
      for (std::size_t i = 0; i < dy.size(); ++i) {
        da[i] += dy[i];
        db[i] += dy[i];
      }
    });
    return ref;
  }

  ValueRef mul(ValueRef a, ValueRef b) {
    Tensor<S> out = skipnet::mul(at(a).value, at(b).value);
    ValueRef ref = push(std::move(out), auto_name("mul"), {a.id, b.id}, nullptr);
    set_backprop(ref, [a, b, ref](Tape& t) {
      const Tensor<S>& av = t.at(a).value;
      const Tensor<S>& bv = t.at(b).value;
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& da = t.at(a).grad;
      Tensor<S>& db = t.at(b).grad;
      for (std::size_t i = 0; i < dy.size(); ++i) {
        da[i] += dy[i] * bv[i];
        db[i] += dy[i] * av[i];
      }
    });
    return ref;
  }

  // a: [N,C,H,W] scaled by a one-channel map m: [N,1,H,W].
  ValueRef mul_broadcast(ValueRef a, ValueRef m) {
    Tensor<S> out = skipnet::mul_broadcast(at(a).value, at(m).value);
    ValueRef ref =
        push(std::move(out), auto_name("mul_broadcast"), {a.id, m.id}, nullptr);
    set_backprop(ref, [a, m, ref](Tape& t) {
      const Tensor<S>& av = t.at(a).value;
      const Tensor<S>& mv = t.at(m).value;
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& da = t.at(a).grad;
      Tensor<S>& dm = t.at(m).grad;
      const std::size_t n = av.extent(0), c = av.extent(1),
                        plane = av.extent(2) * av.extent(3);
      for (std::size_t in = 0; in < n; ++in) {
        const S* map = mv.data() + in * plane;
        S* dmap = dm.data() + in * plane;
        for (std::size_t ic = 0; ic < c; ++ic) {
          const std::size_t base = (in * c + ic) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            da[base + i] += dy[base + i] * map[i];
            dmap[i] += dy[base + i] * av[base + i];
          }
        }
      }
    });
    return ref;
  }

  ValueRef reshape(ValueRef x, const Shape& shape) {
    const Tensor<S>& xv = at(x).value;
    Tensor<S> out(shape, std::vector<S>(xv.data(), xv.data() + xv.size()));
    ValueRef ref = push(std::move(out), auto_name("reshape"), {x.id}, nullptr);
    set_backprop(ref, [x, ref](Tape& t) {
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
    return ref;
  }

  // Dropout with a caller-supplied mask whose entries are 0 or 1/(1-rate);
  // the layer owns mask generation so gradient checking can freeze it.
  ValueRef dropout(ValueRef x, Tensor<S> scaled_mask) {
    if (!at(x).value.same_shape(scaled_mask)) {
      throw DimensionError("dropout mask shape " +
                           shape_string(scaled_mask.shape()) +
                           " does not match input " +
                           shape_string(at(x).value.shape()));
    }
    Tensor<S> out = skipnet::mul(at(x).value, scaled_mask);
    ValueRef ref = push(std::move(out), auto_name("dropout"), {x.id}, nullptr);
    set_backprop(ref, [x, ref, mask = std::move(scaled_mask)](Tape& t) {
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
    });
    return ref;
  }

  // Training-mode batchnorm: normalizes with batch statistics and reports
  // them so the owning layer can maintain running estimates. Gradients flow
  // through the batch mean and variance.
  ValueRef batchnorm_train(ValueRef x, ValueRef gamma, ValueRef beta, S eps,
                           BatchStats* stats_out = nullptr) {
    const Tensor<S>& xv = at(x).value;
    detail::expect_rank(xv, 4, "batchnorm input");
    const std::size_t n = xv.extent(0), c = xv.extent(1),
                      plane = xv.extent(2) * xv.extent(3);
    check_affine(gamma, beta, c);
    const std::size_t m = n * plane;
    if (m < 2) {
      throw ConfigError(
          "batchnorm training needs at least 2 values per channel, got " +
          std::to_string(m));
    }
    Tensor<S> mean({c}), var({c}), inv_std({c});
    for (std::size_t ic = 0; ic < c; ++ic) {
      S sum = S(0);
      for (std::size_t in = 0; in < n; ++in) {
        const S* p = xv.data() + (in * c + ic) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean[ic] = sum / static_cast<S>(m);
      S sq = S(0);
      for (std::size_t in = 0; in < n; ++in) {
        const S* p = xv.data() + (in * c + ic) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const S d = p[i] - mean[ic];
          sq += d * d;
        }
      }
      var[ic] = sq / static_cast<S>(m);
      inv_std[ic] = S(1) / std::sqrt(var[ic] + eps);
    }
    if (stats_out) {
      stats_out->mean = mean;
      stats_out->var_biased = var;
      stats_out->var_unbiased = var;
      for (auto& v : stats_out->var_unbiased) {
        v *= static_cast<S>(m) / static_cast<S>(m - 1);
      }
    }

    const Tensor<S>& gv = at(gamma).value;
    const Tensor<S>& bv = at(beta).value;
    Tensor<S> out(xv.shape());
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t ic = 0; ic < c; ++ic) {
        const S* p = xv.data() + (in * c + ic) * plane;
        S* q = out.data() + (in * c + ic) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          q[i] = gv[ic] * (p[i] - mean[ic]) * inv_std[ic] + bv[ic];
        }
      }
    }
    detail::ensure_finite(out, "batchnorm");
    ValueRef ref = push(std::move(out), auto_name("batchnorm"),
                        {x.id, gamma.id, beta.id}, nullptr);
    set_backprop(ref, [x, gamma, beta, ref, mean = std::move(mean),
                       inv_std = std::move(inv_std)](Tape& t) {
      const Tensor<S>& xv2 = t.at(x).value;
      const Tensor<S>& gv2 = t.at(gamma).value;
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      Tensor<S>& dg = t.at(gamma).grad;
      Tensor<S>& db = t.at(beta).grad;
      const std::size_t n2 = xv2.extent(0), c2 = xv2.extent(1),
                        plane2 = xv2.extent(2) * xv2.extent(3);
      const S m2 = static_cast<S>(n2 * plane2);
      for (std::size_t ic = 0; ic < c2; ++ic) {
        S sum_dy = S(0), sum_dy_xhat = S(0);
        for (std::size_t in = 0; in < n2; ++in) {
          const S* p = xv2.data() + (in * c2 + ic) * plane2;
          const S* g = dy.data() + (in * c2 + ic) * plane2;
          for (std::size_t i = 0; i < plane2; ++i) {
            const S xhat = (p[i] - mean[ic]) * inv_std[ic];
            sum_dy += g[i];
            sum_dy_xhat += g[i] * xhat;
          }
        }
        dg[ic] += sum_dy_xhat;
        db[ic] += sum_dy;
        // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
        const S k = gv2[ic] * inv_std[ic];
        const S mean_dy = sum_dy / m2;
        const S mean_dy_xhat = sum_dy_xhat / m2;
        for (std::size_t in = 0; in < n2; ++in) {
          const S* p = xv2.data() + (in * c2 + ic) * plane2;
          const S* g = dy.data() + (in * c2 + ic) * plane2;
          S* d = dx.data() + (in * c2 + ic) * plane2;
          for (std::size_t i = 0; i < plane2; ++i) {
            const S xhat = (p[i] - mean[ic]) * inv_std[ic];
            d[i] += k * (g[i] - mean_dy - xhat * mean_dy_xhat);
          }
        }
      }
    });
    return ref;
  }

  // Inference-mode batchnorm: running statistics are constants.
  ValueRef batchnorm_eval(ValueRef x, ValueRef gamma, ValueRef beta,
                          const Tensor<S>& running_mean,
                          const Tensor<S>& running_var, S eps) {
    const Tensor<S>& xv = at(x).value;
    detail::expect_rank(xv, 4, "batchnorm input");
    const std::size_t n = xv.extent(0), c = xv.extent(1),
                      plane = xv.extent(2) * xv.extent(3);
    check_affine(gamma, beta, c);
    if (running_mean.extent(0) != c || running_var.extent(0) != c) {
      throw DimensionError("batchnorm running stats must have extent " +
                           std::to_string(c));
    }
    Tensor<S> inv_std({c});
    for (std::size_t ic = 0; ic < c; ++ic) {
      inv_std[ic] = S(1) / std::sqrt(running_var[ic] + eps);
    }
    const Tensor<S>& gv = at(gamma).value;
    const Tensor<S>& bv = at(beta).value;
    Tensor<S> out(xv.shape());
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t ic = 0; ic < c; ++ic) {
        const S* p = xv.data() + (in * c + ic) * plane;
        S* q = out.data() + (in * c + ic) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          q[i] = gv[ic] * (p[i] - running_mean[ic]) * inv_std[ic] + bv[ic];
        }
      }
    }
    detail::ensure_finite(out, "batchnorm");
    ValueRef ref = push(std::move(out), auto_name("batchnorm_eval"),
                        {x.id, gamma.id, beta.id}, nullptr);
    set_backprop(ref, [x, gamma, beta, ref, mean = running_mean,
                       inv_std = std::move(inv_std)](Tape& t) {
      const Tensor<S>& xv2 = t.at(x).value;
      const Tensor<S>& gv2 = t.at(gamma).value;
      const Tensor<S>& dy = t.at(ref).grad;
      Tensor<S>& dx = t.at(x).grad;
      Tensor<S>& dg = t.at(gamma).grad;
      Tensor<S>& db = t.at(beta).grad;
      const std::size_t n2 = xv2.extent(0), c2 = xv2.extent(1),
                        plane2 = xv2.extent(2) * xv2.extent(3);
      for (std::size_t ic = 0; ic < c2; ++ic) {
        const S k = gv2[ic] * inv_std[ic];
        for (std::size_t in = 0; in < n2; ++in) {
          const S* p = xv2.data() + (in * c2 + ic) * plane2;
          const S* g = dy.data() + (in * c2 + ic) * plane2;
          S* d = dx.data() + (in * c2 + ic) * plane2;
          for (std::size_t i = 0; i < plane2; ++i) {
            d[i] += g[i] * k;
            dg[ic] += g[i] * (p[i] - mean[ic]) * inv_std[ic];
            db[ic] += g[i];
          }
        }
      }
    });
    return ref;
  }

  // Mean sparse categorical cross-entropy over the batch, fused with
  // log-sum-exp for stability: loss_n = log Σ_k exp(z_k − m) − (z_y − m).
  ValueRef sparse_ce(ValueRef logits, std::vector<std::size_t> labels) {
    const Tensor<S>& z = at(logits).value;
    detail::expect_rank(z, 2, "sparse_ce logits");
    const std::size_t n = z.extent(0), k = z.extent(1);
    if (labels.size() != n) {
      throw DimensionError("sparse_ce: " + std::to_string(labels.size()) +
                           " labels for batch of " + std::to_string(n));
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (labels[r] >= k) {
        throw DataError("sparse_ce: label " + std::to_string(labels[r]) +
                        " out of range for " + std::to_string(k) + " classes");
      }
    }
    Tensor<S> probs = skipnet::softmax(z);
    S total = S(0);
    for (std::size_t r = 0; r < n; ++r) {
      const S* row = z.data() + r * k;
      S mx = row[0];
      for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
      S lse = S(0);
      for (std::size_t i = 0; i < k; ++i) lse += std::exp(row[i] - mx);
      total += std::log(lse) - (row[labels[r]] - mx);
    }
    Tensor<S> out = Tensor<S>::scalar(total / static_cast<S>(n));
    detail::ensure_finite(out, "sparse_ce");
    ValueRef ref =
        push(std::move(out), auto_name("sparse_ce"), {logits.id}, nullptr);
    set_backprop(ref, [logits, ref, labels = std::move(labels),
                       probs = std::move(probs)](Tape& t) {
      const S dy = t.at(ref).grad[0];
      Tensor<S>& dz = t.at(logits).grad;
      const std::size_t n2 = probs.extent(0), k2 = probs.extent(1);
      const S inv_n = S(1) / static_cast<S>(n2);
      for (std::size_t r = 0; r < n2; ++r) {
        for (std::size_t i = 0; i < k2; ++i) {
          const S onehot = (i == labels[r]) ? S(1) : S(0);
          dz[r * k2 + i] += dy * inv_n * (probs[r * k2 + i] - onehot);
        }
      }
    });
    return ref;
  }

  ValueRef sum(ValueRef x) {
    Tensor<S> out = Tensor<S>::scalar(sum_all(at(x).value));
    detail::ensure_finite(out, "sum");
    ValueRef ref = push(std::move(out), auto_name("sum"), {x.id}, nullptr);
    set_backprop(ref, [x, ref](Tape& t) {
      const S dy = t.at(ref).grad[0];
      Tensor<S>& dx = t.at(x).grad;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
    });
    return ref;
  }

  // Reverse sweep from `loss`. Returns the gradient of every registered
  // parameter by name; parameters the loss does not reach map to zeros.
  std::map<std::string, Tensor<S>> backward(ValueRef loss) {
    const Node& loss_node = at(loss);
    if (loss_node.value.size() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " +
                       shape_string(loss_node.value.shape()));
    }
    for (Node& node : nodes_) {
      node.grad.fill(S(0));
    }
    nodes_[loss.id].grad[0] = S(1);

    // Mark ancestors of the loss so unrelated branches are skipped.
    std::vector<char> reachable(nodes_.size(), 0);
    reachable[loss.id] = 1;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (!reachable[i]) continue;
      for (std::size_t p : nodes_[i].parents) reachable[p] = 1;
    }
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!reachable[i] || !node.backprop) continue;
      if (!node.grad.all_finite()) {
        throw NumericError("non-finite gradient at node '" + node.name + "'");
      }
      node.backprop(*this);
    }

    std::map<std::string, Tensor<S>> grads;
    for (const auto& [name, id] : params_) {
      if (!nodes_[id].grad.all_finite()) {
        throw NumericError("non-finite gradient for parameter '" + name + "'");
      }
      grads.emplace(name, nodes_[id].grad);
    }
    return grads;
  }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::string name;
    std::vector<std::size_t> parents;
    std::function<void(Tape&)> backprop;
  };

  Node& at(ValueRef ref) {
    if (ref.id >= nodes_.size()) throw UsageError("invalid tape node reference");
    return nodes_[ref.id];
  }
  const Node& at(ValueRef ref) const {
    if (ref.id >= nodes_.size()) throw UsageError("invalid tape node reference");
    return nodes_[ref.id];
  }

  std::string auto_name(const char* kind) {
    return std::string(kind) + "#" + std::to_string(nodes_.size());
  }

  ValueRef push(Tensor<S> value, std::string name,
                std::vector<std::size_t> parents,
                std::function<void(Tape&)> backprop) {
    Node node;
    node.grad = Tensor<S>(value.shape());
    node.value = std::move(value);
    node.name = std::move(name);
    node.parents = std::move(parents);
    node.backprop = std::move(backprop);
    nodes_.push_back(std::move(node));
    return ValueRef{nodes_.size() - 1};
  }

  void set_backprop(ValueRef ref, std::function<void(Tape&)> fn) {
    nodes_[ref.id].backprop = std::move(fn);
  }

  void check_affine(ValueRef gamma, ValueRef beta, std::size_t c) const {
    if (at(gamma).value.rank() != 1 || at(gamma).value.extent(0) != c ||
        at(beta).value.rank() != 1 || at(beta).value.extent(0) != c) {
      throw DimensionError("batchnorm gamma/beta must have shape {" +
                           std::to_string(c) + "}");
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
};

}  // namespace skipnet
