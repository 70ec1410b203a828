#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fixnorm/autodiff.hpp"
#include "fixnorm/errors.hpp"
#include "fixnorm/tensor.hpp"

namespace fixnorm {

/// Weight-normalized fully-connected head:
///   logits = (x * W / ||W||) * g
/// where ||W|| is the Frobenius norm of the whole class-weight matrix and g
/// is a single learnable scalar.
struct WnFcParams {
  Tensor weight;  // [D,C], column i = class center W_i
  Tensor gain;    // [1]
};

/// WN-FC whose effective gain is capped:
///   logits = (x * W / ||W||) * min(g, alpha * sqrt(C))
struct FixNormFcParams {
  Tensor weight;  // [D,C]
  Tensor gain;    // [1]
  double alpha = 1.0;

  std::size_t classes() const { return weight.dim(1); }
  double gain_cap() const { return alpha * std::sqrt(static_cast<double>(classes())); }
};

/// Convolutional analogue, cap alpha * sqrt(c_out):
///   out = Conv(x, K) / ||K|| * min(g, alpha * sqrt(c_out))
struct FixNormConvParams {
  Tensor kernel;  // [c_out, c_in, kh, kw]
  Tensor gain;    // [1]
  double alpha = 1.0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  double gain_cap() const { return alpha * std::sqrt(static_cast<double>(kernel.dim(0))); }
};

namespace detail {

// min(g, cap) with the g-branch winning ties, so the gain can still move when
// it sits exactly on the cap.
inline bool gain_branch_active(double g, double cap) { return g <= cap; }

inline double effective_gain(double g, double cap) {
  return gain_branch_active(g, cap) ? g : cap;
}

}  // namespace detail

/// Shared core of WN-FC and FixNorm-FC. cap = +inf recovers WN-FC exactly:
/// identical arithmetic, bit for bit, whenever g <= cap.
inline ValueId capped_wn_fc(Tape& t, ValueId x, ValueId w, ValueId g, double cap) {
  const Tensor& wv = t.value(w);
  if (wv.rank() != 2) throw shape_error("wn_fc: weight must be [D,C]");
  if (t.value(g).size() != 1) throw shape_error("wn_fc: gain must be scalar");
  const double nrm = wv.norm();
  if (nrm == 0.0) throw degenerate_error("wn_fc: zero weight norm");
  const double gv = t.value(g)[0];
  const double ge = detail::effective_gain(gv, cap);
  const double c0 = ge / nrm;

  Tensor a = matmul(t.value(x), wv);  // raw products x*W, saved for the vjp
  Tensor y = a * c0;
  return t.emit(std::move(y), [x, w, g, a = std::move(a), nrm, gv, ge, c0, cap](
                                  Tape& tp, const Tensor& up) {
    const Tensor& xv = tp.value(x);
    const Tensor& wv = tp.value(w);
    Tensor gx = Tensor::zeros_like(xv);
    Tensor gw = Tensor::zeros_like(wv);
    Tensor up_scaled = up * c0;
    matmul_backward(xv, wv, up_scaled, gx, gw);

    double dot = 0.0;  // <up, x*W>
    for (std::size_t i = 0; i < a.size(); ++i) dot += up[i] * a[i];

    // d(ge/||W||)/dW = -ge * W / ||W||^3
    const double wcoef = -dot * ge / (nrm * nrm * nrm);
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += wcoef * wv[i];

    Tensor gg({1});
    gg[0] = detail::gain_branch_active(gv, cap) ? dot / nrm : 0.0;

    tp.accumulate(x, gx);
    tp.accumulate(w, gw);
    tp.accumulate(g, gg);
  });
}

inline ValueId wn_fc(Tape& t, ValueId x, ValueId w, ValueId g) {
  return capped_wn_fc(t, x, w, g, std::numeric_limits<double>::infinity());
}

inline ValueId fixnorm_fc(Tape& t, ValueId x, ValueId w, ValueId g, double alpha) {
  const double cap = alpha * std::sqrt(static_cast<double>(t.value(w).dim(1)));
  return capped_wn_fc(t, x, w, g, cap);
}

inline ValueId fixnorm_conv(Tape& t, ValueId x, ValueId k, ValueId g, double alpha,
                            std::size_t stride, std::size_t pad) {
  const Tensor& kv = t.value(k);
  const double nrm = kv.norm();
  if (nrm == 0.0) throw degenerate_error("fixnorm_conv: zero kernel norm");
  const double cap = alpha * std::sqrt(static_cast<double>(kv.dim(0)));
  const double gv = t.value(g)[0];
  const double ge = detail::effective_gain(gv, cap);
  const double c0 = ge / nrm;

  Tensor a = conv2d_forward(t.value(x), kv, stride, pad);
  Tensor y = a * c0;
  return t.emit(std::move(y), [x, k, g, a = std::move(a), nrm, gv, ge, c0, cap, stride, pad](
                                  Tape& tp, const Tensor& up) {
    const Tensor& xv = tp.value(x);
    const Tensor& kv = tp.value(k);
    Tensor gx = Tensor::zeros_like(xv);
    Tensor gk = Tensor::zeros_like(kv);
    Tensor up_scaled = up * c0;
    conv2d_backward(xv, kv, stride, pad, up_scaled, gx, gk);

    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += up[i] * a[i];
    const double kcoef = -dot * ge / (nrm * nrm * nrm);
    for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += kcoef * kv[i];

    Tensor gg({1});
    gg[0] = detail::gain_branch_active(gv, cap) ? dot / nrm : 0.0;

    tp.accumulate(x, gx);
    tp.accumulate(k, gk);
    tp.accumulate(g, gg);
  });
}

// Convenience wrappers over the parameter structs (the tape leaves are
// created fresh; callers who train use the model path instead).

inline Tensor wn_fc_forward(const Tensor& x, const WnFcParams& p) {
  Tape t;
  return t.value(wn_fc(t, t.leaf(x), t.leaf(p.weight), t.leaf(p.gain)));
}

inline Tensor fixnorm_fc_forward(const Tensor& x, const FixNormFcParams& p) {
  Tape t;
  return t.value(fixnorm_fc(t, t.leaf(x), t.leaf(p.weight), t.leaf(p.gain), p.alpha));
}

inline Tensor fixnorm_conv_forward(const Tensor& x, const FixNormConvParams& p) {
  Tape t;
  return t.value(
      fixnorm_conv(t, t.leaf(x), t.leaf(p.kernel), t.leaf(p.gain), p.alpha, p.stride, p.pad));
}

/// Closed form of the negative input-gradient of -log p_k under a WN-FC head:
///   (g / ||W||) * sum_{j != k} p_j (W_k - W_j)
/// with logits s_i = (x^T W_i / ||W||) g and p = softmax(s). Serves as an
/// independent oracle for the tape path (hard labels, no smoothing).
inline std::vector<double> closed_form_input_grad(const std::vector<double>& x, int label,
                                                  const WnFcParams& p) {
  const std::size_t d = p.weight.dim(0), c = p.weight.dim(1);
  if (x.size() != d) throw shape_error("closed_form_input_grad: feature length mismatch");
  if (label < 0 || static_cast<std::size_t>(label) >= c) {
    throw std::out_of_range("closed_form_input_grad: label out of range");
  }
  const double nrm = p.weight.norm();
  if (nrm == 0.0) throw degenerate_error("closed_form_input_grad: zero weight norm");
  const double g = p.gain[0];

  std::vector<double> s(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += x[i] * p.weight[i * c + j];
    s[j] = dot / nrm * g;
  }
  double mx = s[0];
  for (double v : s) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : s) z += std::exp(v - mx);
  std::vector<double> prob(c);
  for (std::size_t j = 0; j < c; ++j) prob[j] = std::exp(s[j] - mx) / z;

  const auto k = static_cast<std::size_t>(label);
  std::vector<double> out(d, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    if (j == k) continue;
    for (std::size_t i = 0; i < d; ++i) {
      out[i] += prob[j] * (p.weight[i * c + k] - p.weight[i * c + j]);
    }
  }
  for (double& v : out) v *= g / nrm;
  return out;
}

struct McbrResult {
  std::vector<double> per_sample;
  double mean = 0.0;
};

/// Mean Cross-Boundary Risk: per sample,
///   (1/(C-1)) * sum_{j != k} cos(x, W_j - W_k)
/// averaged over the batch. Degenerate terms (zero feature or W_j == W_k)
/// contribute 0 while the divisor stays C-1.
inline McbrResult mcbr(const Tensor& features, const std::vector<int>& labels,
                       const Tensor& weight) {
  if (features.rank() != 2 || weight.rank() != 2 || features.dim(1) != weight.dim(0)) {
    throw shape_error("mcbr: expects features [B,D] and weight [D,C]");
  }
  const std::size_t b = features.dim(0), d = features.dim(1), c = weight.dim(1);
  if (c < 2) throw shape_error("mcbr: needs at least 2 classes");
  if (labels.size() != b) throw shape_error("mcbr: label count mismatch");

  McbrResult res;
  res.per_sample.resize(b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || k >= c) throw std::out_of_range("mcbr: label out of range");
    double xn = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double v = features[i * d + t];
      xn += v * v;
    }
    xn = std::sqrt(xn);
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == k) continue;
      double dn = 0.0, dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = weight[t * c + j] - weight[t * c + k];
        dn += diff * diff;
        dot += features[i * d + t] * diff;
      }
      dn = std::sqrt(dn);
      if (xn == 0.0 || dn == 0.0) continue;  // term contributes 0
      acc += dot / (xn * dn);
    }
    res.per_sample[i] = acc / static_cast<double>(c - 1);
    res.mean += res.per_sample[i];
  }
  res.mean /= static_cast<double>(b);
  return res;
}

}  // namespace fixnorm
