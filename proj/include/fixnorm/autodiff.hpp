#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fixnorm/errors.hpp"
#include "fixnorm/tensor.hpp"

namespace fixnorm {

using ValueId = std::size_t;

/// Reverse-mode tape. Values are appended during the forward pass; backward()
/// replays the recorded nodes once, newest first, which is a reverse
/// topological order by construction.
///
/// A tape is owned by exactly one training step / one thread. Independent
/// tapes may run concurrently.
class Tape {
 public:
  using Vjp = std::function<void(Tape&, const Tensor& upstream)>;

  ValueId leaf(Tensor value) {
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  /// Registers an op result together with its vector-Jacobian product.
  /// The vjp receives the upstream gradient of the emitted value and must
  /// accumulate into the gradients of its inputs.
  ValueId emit(Tensor value, Vjp vjp) {
    values_.push_back(std::move(value));
    ValueId id = values_.size() - 1;
    nodes_.push_back(Node{id, std::move(vjp)});
    return id;
  }

  const Tensor& value(ValueId id) const { return values_.at(id); }

  void accumulate(ValueId id, const Tensor& g) {
    if (!grads_[id].same_shape(g)) throw shape_error("tape: gradient shape mismatch");
    grads_[id] += g;
  }

  /// Backpropagates from a scalar root. Every recorded node is visited
  /// exactly once, in reverse order of creation.
  void backward(ValueId root) {
    if (value(root).size() != 1) throw shape_error("backward: root must be scalar");
    grads_.assign(values_.size(), Tensor());
    for (std::size_t i = 0; i < values_.size(); ++i) {
      grads_[i] = Tensor::zeros_like(values_[i]);
    }
    grads_[root][0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->vjp(*this, grads_[it->out]);
    }
  }

  const Tensor& grad(ValueId id) const {
    if (grads_.size() != values_.size()) throw state_error("tape: backward() not run");
    return grads_.at(id);
  }

 private:
  struct Node {
    ValueId out;
    Vjp vjp;
  };

  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Plain tensor kernels, shared by tape ops and by the normalized heads.
// ---------------------------------------------------------------------------

/// y[B,C] = x[B,D] * w[D,C]
inline Tensor matmul(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw shape_error("matmul: inner dimensions disagree, " + x.shape_str() + " * " + w.shape_str());
  }
  const std::size_t b = x.dim(0), d = x.dim(1), c = w.dim(1);
  Tensor y({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double xv = x[i * d + k];
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) y[i * c + j] += xv * w[k * c + j];
    }
  }
  return y;
}

/// gx[B,D] += gy[B,C] * w^T;  gw[D,C] += x^T * gy
inline void matmul_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                            Tensor& gx, Tensor& gw) {
  const std::size_t b = x.dim(0), d = x.dim(1), c = w.dim(1);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double g = gy[i * c + j];
      if (g == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) {
        gx[i * d + k] += g * w[k * c + j];
        gw[k * c + j] += g * x[i * d + k];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t batch, c_in, h, w;
  std::size_t c_out, kh, kw;
  std::size_t stride, pad;
  std::size_t h_out, w_out;
};

inline ConvGeometry conv_geometry(const Tensor& x, const Tensor& k,
                                  std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || k.rank() != 4) throw shape_error("conv2d: expects 4-d input and kernel");
  if (x.dim(1) != k.dim(1)) {
    throw shape_error("conv2d: channel mismatch, input " + x.shape_str() + " kernel " + k.shape_str());
  }
  if (stride == 0) throw shape_error("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3),
                 k.dim(0), k.dim(2), k.dim(3), stride, pad, 0, 0};
  const std::size_t ph = g.h + 2 * pad, pw = g.w + 2 * pad;
  if (g.kh > ph || g.kw > pw) throw shape_error("conv2d: kernel exceeds padded input");
  g.h_out = (ph - g.kh) / stride + 1;
  g.w_out = (pw - g.kw) / stride + 1;
  if (g.h_out == 0 || g.w_out == 0) throw shape_error("conv2d: zero-size output");
  return g;
}

/// Direct cross-correlation, zero padding, no bias.
inline Tensor conv2d_forward(const Tensor& x, const Tensor& k,
                             std::size_t stride, std::size_t pad) {
  const ConvGeometry g = conv_geometry(x, k, stride, pad);
  Tensor y({g.batch, g.c_out, g.h_out, g.w_out});
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.c_out; ++co) {
      for (std::size_t oh = 0; oh < g.h_out; ++oh) {
        for (std::size_t ow = 0; ow < g.w_out; ++ow) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < g.c_in; ++ci) {
            for (std::size_t r = 0; r < g.kh; ++r) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + r) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t s = 0; s < g.kw; ++s) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + s) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                acc += x[((b * g.c_in + ci) * g.h + ih) * g.w + iw] *
                       k[((co * g.c_in + ci) * g.kh + r) * g.kw + s];
              }
            }
          }
          y[((b * g.c_out + co) * g.h_out + oh) * g.w_out + ow] = acc;
        }
      }
    }
  }
  return y;
}

/// Accumulates input and kernel gradients of conv2d_forward.
inline void conv2d_backward(const Tensor& x, const Tensor& k, std::size_t stride,
                            std::size_t pad, const Tensor& gy, Tensor& gx, Tensor& gk) {
  const ConvGeometry g = conv_geometry(x, k, stride, pad);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.c_out; ++co) {
      for (std::size_t oh = 0; oh < g.h_out; ++oh) {
        for (std::size_t ow = 0; ow < g.w_out; ++ow) {
          const double up = gy[((b * g.c_out + co) * g.h_out + oh) * g.w_out + ow];
          if (up == 0.0) continue;
          for (std::size_t ci = 0; ci < g.c_in; ++ci) {
            for (std::size_t r = 0; r < g.kh; ++r) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + r) -
                                        static_cast<std::ptrdiff_t>(pad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t s = 0; s < g.kw; ++s) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride + s) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.w)) continue;
                const std::size_t xi = ((b * g.c_in + ci) * g.h + ih) * g.w + iw;
                const std::size_t ki = ((co * g.c_in + ci) * g.kh + r) * g.kw + s;
                gx[xi] += up * k[ki];
                gk[ki] += up * x[xi];
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Tape ops.
// ---------------------------------------------------------------------------

inline ValueId linear(Tape& t, ValueId x, ValueId w) {
  Tensor y = matmul(t.value(x), t.value(w));
  return t.emit(std::move(y), [x, w](Tape& tp, const Tensor& up) {
    Tensor gx = Tensor::zeros_like(tp.value(x));
    Tensor gw = Tensor::zeros_like(tp.value(w));
    matmul_backward(tp.value(x), tp.value(w), up, gx, gw);
    tp.accumulate(x, gx);
    tp.accumulate(w, gw);
  });
}

inline ValueId conv2d(Tape& t, ValueId x, ValueId k, std::size_t stride, std::size_t pad) {
  Tensor y = conv2d_forward(t.value(x), t.value(k), stride, pad);
  return t.emit(std::move(y), [x, k, stride, pad](Tape& tp, const Tensor& up) {
    Tensor gx = Tensor::zeros_like(tp.value(x));
    Tensor gk = Tensor::zeros_like(tp.value(k));
    conv2d_backward(tp.value(x), tp.value(k), stride, pad, up, gx, gk);
    tp.accumulate(x, gx);
    tp.accumulate(k, gk);
  });
}

inline ValueId relu(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  Tensor y = Tensor::zeros_like(xv);
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  // Subgradient at 0 is taken as 0.
  return t.emit(std::move(y), [x](Tape& tp, const Tensor& up) {
    const Tensor& xv = tp.value(x);
    Tensor gx = Tensor::zeros_like(xv);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = xv[i] > 0.0 ? up[i] : 0.0;
    tp.accumulate(x, gx);
  });
}

/// [B,C,H,W] -> [B,C], mean over the spatial extent.
inline ValueId global_avg_pool(Tape& t, ValueId x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4) throw shape_error("global_avg_pool: expects 4-d input");
  const std::size_t b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor y({b, c});
  for (std::size_t i = 0; i < b * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += xv[i * hw + j];
    y[i] = acc / static_cast<double>(hw);
  }
  return t.emit(std::move(y), [x, b, c, hw](Tape& tp, const Tensor& up) {
    Tensor gx = Tensor::zeros_like(tp.value(x));
    for (std::size_t i = 0; i < b * c; ++i) {
      const double g = up[i] / static_cast<double>(hw);
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] = g;
    }
    tp.accumulate(x, gx);
  });
}

/// Per-channel batch standardization state: running statistics plus the
/// learnable affine parameters' metadata (gamma/beta live as tensors in the
/// owning model; this struct is the op's persistent state).
struct BatchNormState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double epsilon = 1e-5;
  double momentum = 0.9;

  explicit BatchNormState(std::size_t channels)
      : running_mean({channels}), running_var(Tensor::full({channels}, 1.0)) {}
};

/// Batch normalization over the channel axis (axis 1). Accepts [B,C] or
/// [B,C,H,W]. Training mode uses batch statistics and updates the running
/// ones; eval mode uses the running statistics.
inline ValueId batchnorm(Tape& t, ValueId x, ValueId gamma, ValueId beta,
                         BatchNormState& state, bool training) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2 && xv.rank() != 4) throw shape_error("batchnorm: expects 2-d or 4-d input");
  const std::size_t b = xv.dim(0), c = xv.dim(1);
  const std::size_t hw = xv.rank() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  const std::size_t n = b * hw;
  if (c != state.running_mean.dim(0)) throw shape_error("batchnorm: channel count mismatch");
  if (training && n < 2) throw degenerate_error("batchnorm: degenerate batch (need >= 2 values per channel)");

  const Tensor& g = t.value(gamma);
  const Tensor& bt = t.value(beta);
  auto at = [&](std::size_t bi, std::size_t ci, std::size_t si) {
    return (bi * c + ci) * hw + si;
  };

  Tensor mean({c}), invstd({c});
  if (training) {
    Tensor var({c});
    for (std::size_t ci = 0; ci < c; ++ci) {
      double m = 0.0;
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t si = 0; si < hw; ++si) m += xv[at(bi, ci, si)];
      m /= static_cast<double>(n);
      double v = 0.0;
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t si = 0; si < hw; ++si) {
          const double d = xv[at(bi, ci, si)] - m;
          v += d * d;
        }
      v /= static_cast<double>(n);  // biased batch variance
      mean[ci] = m;
      var[ci] = v;
      invstd[ci] = 1.0 / std::sqrt(v + state.epsilon);
      state.running_mean[ci] = state.momentum * state.running_mean[ci] + (1.0 - state.momentum) * m;
      state.running_var[ci] = state.momentum * state.running_var[ci] + (1.0 - state.momentum) * v;
    }
  } else {
    for (std::size_t ci = 0; ci < c; ++ci) {
      mean[ci] = state.running_mean[ci];
      invstd[ci] = 1.0 / std::sqrt(state.running_var[ci] + state.epsilon);
    }
  }

  Tensor xhat = Tensor::zeros_like(xv);
  Tensor y = Tensor::zeros_like(xv);
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t si = 0; si < hw; ++si) {
        const std::size_t i = at(bi, ci, si);
        xhat[i] = (xv[i] - mean[ci]) * invstd[ci];
        y[i] = g[ci] * xhat[i] + bt[ci];
      }
    }
  }

  return t.emit(std::move(y), [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd),
                               b, c, hw, n, training](Tape& tp, const Tensor& up) {
    const Tensor& g = tp.value(gamma);
    Tensor gx = Tensor::zeros_like(tp.value(x));
    Tensor gg({c}), gb({c});
    auto at = [&](std::size_t bi, std::size_t ci, std::size_t si) {
      return (bi * c + ci) * hw + si;
    };
    for (std::size_t ci = 0; ci < c; ++ci) {
      double sum_up = 0.0, sum_up_xhat = 0.0;
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t si = 0; si < hw; ++si) {
          const std::size_t i = at(bi, ci, si);
          sum_up += up[i];
          sum_up_xhat += up[i] * xhat[i];
        }
      }
      gg[ci] = sum_up_xhat;
      gb[ci] = sum_up;
      if (training) {
        const double mean_up = sum_up / static_cast<double>(n);
        const double mean_up_xhat = sum_up_xhat / static_cast<double>(n);
        for (std::size_t bi = 0; bi < b; ++bi) {
          for (std::size_t si = 0; si < hw; ++si) {
            const std::size_t i = at(bi, ci, si);
            gx[i] = g[ci] * invstd[ci] * (up[i] - mean_up - xhat[i] * mean_up_xhat);
          }
        }
      } else {
        for (std::size_t bi = 0; bi < b; ++bi) {
          for (std::size_t si = 0; si < hw; ++si) {
            const std::size_t i = at(bi, ci, si);
            gx[i] = g[ci] * invstd[ci] * up[i];
          }
        }
      }
    }
    tp.accumulate(x, gx);
    tp.accumulate(gamma, gg);
    tp.accumulate(beta, gb);
  });
}

/// Mean softmax cross-entropy with label smoothing. Targets put 1-eps on the
/// label class and eps/(C-1) on each other class; eps = 0 recovers -log p_k.
inline ValueId softmax_ce(Tape& t, ValueId logits, const std::vector<int>& labels,
                          double eps) {
  const Tensor& s = t.value(logits);
  if (s.rank() != 2) throw shape_error("softmax_ce: logits must be [B,C]");
  const std::size_t b = s.dim(0), c = s.dim(1);
  if (labels.size() != b) throw shape_error("softmax_ce: label count mismatch");
  if (eps < 0.0 || eps >= 1.0) throw config_error("softmax_ce: smoothing must be in [0,1)");
  if (eps > 0.0 && c < 2) throw config_error("softmax_ce: smoothing requires >= 2 classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::out_of_range("softmax_ce: label out of range");
    }
  }

  Tensor p({b, c});
  double loss = 0.0;
  const double off = eps > 0.0 ? eps / static_cast<double>(c - 1) : 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, s[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(s[i * c + j] - mx);
    const double logz = std::log(z) + mx;
    const auto k = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < c; ++j) {
      const double logp = s[i * c + j] - logz;
      p[i * c + j] = std::exp(logp);
      const double target = j == k ? 1.0 - eps : off;
      if (target != 0.0) loss -= target * logp;
    }
  }
  loss /= static_cast<double>(b);

  return t.emit(Tensor::scalar(loss),
                [logits, labels, p = std::move(p), b, c, eps, off](Tape& tp, const Tensor& up) {
                  Tensor gs({b, c});
                  const double scale = up[0] / static_cast<double>(b);
                  for (std::size_t i = 0; i < b; ++i) {
                    const auto k = static_cast<std::size_t>(labels[i]);
                    for (std::size_t j = 0; j < c; ++j) {
                      const double target = j == k ? 1.0 - eps : off;
                      gs[i * c + j] = scale * (p[i * c + j] - target);
                    }
                  }
                  tp.accumulate(logits, gs);
                });
}

/// <w, x> with a fixed weight tensor; scalar probe used by gradient checks
/// and scale-invariance tests.
inline ValueId weighted_sum(Tape& t, ValueId x, Tensor w) {
  const Tensor& xv = t.value(x);
  if (!xv.same_shape(w)) throw shape_error("weighted_sum: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * w[i];
  return t.emit(Tensor::scalar(acc), [x, w = std::move(w)](Tape& tp, const Tensor& up) {
    Tensor gx = w;
    gx *= up[0];
    tp.accumulate(x, gx);
  });
}

}  // namespace fixnorm
