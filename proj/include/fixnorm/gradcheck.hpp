#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fixnorm/autodiff.hpp"
#include "fixnorm/errors.hpp"
#include "fixnorm/heads.hpp"
#include "fixnorm/tensor.hpp"

namespace fixnorm {

/// Central finite differences, (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
/// The oracle only evaluates f; it never touches the tape's backward path.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                               double h) {
  if (h <= 0.0) throw config_error("finite_diff_grad: step must be positive");
  Tensor g = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw degenerate_error("finite_diff_grad: non-finite function value");
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// |a-b| relative to max(|a|,|b|), floored so that finite-difference noise on
/// near-zero components does not blow up the ratio.
inline double rel_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-4) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_error(a[i], b[i], floor));
  return m;
}

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0.0;
  int instances = 0;
  bool pass(double tol = 1e-5) const { return max_rel_err < tol; }
};

namespace detail {

constexpr double kFdStep = 1e-5;

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                            double scale = 1.0) {
  Tensor t(std::move(shape));
  fill_normal(t, rng, scale);
  return t;
}

// Checks d<probe, op(...)>/d(input j) against central differences for every
// differentiable input of the op. `build` assembles the op output on a tape
// from leaf ids in the order of `inputs`.
inline double check_op(const std::vector<Tensor>& inputs,
                       const std::function<ValueId(Tape&, const std::vector<ValueId>&)>& build,
                       std::mt19937_64& rng) {
  Tape t0;
  std::vector<ValueId> ids;
  ids.reserve(inputs.size());
  for (const Tensor& in : inputs) ids.push_back(t0.leaf(in));
  const ValueId out0 = build(t0, ids);
  Tensor probe = random_tensor(t0.value(out0).shape(), rng);
  const ValueId loss0 = weighted_sum(t0, out0, probe);
  t0.backward(loss0);

  double worst = 0.0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    auto f = [&](const Tensor& x) {
      Tape t;
      std::vector<ValueId> vids;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        vids.push_back(t.leaf(i == j ? x : inputs[i]));
      }
      const ValueId out = build(t, vids);
      return t.value(weighted_sum(t, out, probe))[0];
    };
    const Tensor fd = finite_diff_grad(f, inputs[j], kFdStep);
    worst = std::max(worst, max_rel_error(t0.grad(ids[j]), fd));
  }
  return worst;
}

}  // namespace detail

/// Runs the finite-difference oracle over every differentiable op, `instances`
/// seeded random cases each. Returns one report per op.
inline std::vector<GradCheckReport> gradcheck_suite(unsigned long seed, int instances = 20) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckReport> reports;

  auto run = [&](const std::string& name,
                 const std::function<double(std::mt19937_64&)>& one_case) {
    GradCheckReport r{name, 0.0, instances};
    for (int i = 0; i < instances; ++i) r.max_rel_err = std::max(r.max_rel_err, one_case(rng));
    reports.push_back(r);
  };

  using detail::check_op;
  using detail::random_tensor;

  run("linear", [&](std::mt19937_64& g) {
    return check_op({random_tensor({3, 4}, g), random_tensor({4, 2}, g)},
                    [](Tape& t, const std::vector<ValueId>& v) { return linear(t, v[0], v[1]); },
                    g);
  });

  run("conv2d", [&](std::mt19937_64& g) {
    return check_op({random_tensor({2, 3, 5, 5}, g), random_tensor({4, 3, 3, 3}, g)},
                    [](Tape& t, const std::vector<ValueId>& v) {
                      return conv2d(t, v[0], v[1], 1, 1);
                    },
                    g);
  });

  run("batchnorm", [&](std::mt19937_64& g) {
    BatchNormState st(2);
    return check_op({random_tensor({4, 2, 3, 3}, g), random_tensor({2}, g),
                     random_tensor({2}, g)},
                    [&st](Tape& t, const std::vector<ValueId>& v) {
                      return batchnorm(t, v[0], v[1], v[2], st, true);
                    },
                    g);
  });

  run("relu", [&](std::mt19937_64& g) {
    // keep samples away from the kink at 0
    Tensor x = random_tensor({3, 5}, g);
    for (double& v : x.data()) {
      if (std::abs(v) < 0.1) v = v < 0.0 ? v - 0.1 : v + 0.1;
    }
    return check_op({x},
                    [](Tape& t, const std::vector<ValueId>& v) { return relu(t, v[0]); }, g);
  });

  run("global_avg_pool", [&](std::mt19937_64& g) {
    return check_op({random_tensor({2, 3, 4, 4}, g)},
                    [](Tape& t, const std::vector<ValueId>& v) {
                      return global_avg_pool(t, v[0]);
                    },
                    g);
  });

  auto ce_case = [&](std::mt19937_64& g, double eps) {
    Tensor logits = random_tensor({2, 5}, g);
    std::vector<int> labels(2);
    std::uniform_int_distribution<int> lab(0, 4);
    for (int& y : labels) y = lab(g);
    Tape t0;
    const ValueId lid = t0.leaf(logits);
    t0.backward(softmax_ce(t0, lid, labels, eps));
    auto f = [&](const Tensor& x) {
      Tape t;
      return t.value(softmax_ce(t, t.leaf(x), labels, eps))[0];
    };
    return max_rel_error(t0.grad(lid), finite_diff_grad(f, logits, detail::kFdStep));
  };
  run("softmax_ce", [&](std::mt19937_64& g) { return ce_case(g, 0.0); });
  run("softmax_ce_smoothed", [&](std::mt19937_64& g) { return ce_case(g, 0.1); });

  run("wn_fc", [&](std::mt19937_64& g) {
    return check_op({random_tensor({3, 4}, g), random_tensor({4, 3}, g),
                     Tensor::scalar(1.5)},
                    [](Tape& t, const std::vector<ValueId>& v) {
                      return wn_fc(t, v[0], v[1], v[2]);
                    },
                    g);
  });

  // exercise both sides of the gain cap (cap = alpha*sqrt(C) = 2 here)
  run("fixnorm_fc_below_cap", [&](std::mt19937_64& g) {
    return check_op({random_tensor({3, 4}, g), random_tensor({4, 4}, g),
                     Tensor::scalar(1.2)},
                    [](Tape& t, const std::vector<ValueId>& v) {
                      return fixnorm_fc(t, v[0], v[1], v[2], 1.0);
                    },
                    g);
  });
  run("fixnorm_fc_above_cap", [&](std::mt19937_64& g) {
    return check_op({random_tensor({3, 4}, g), random_tensor({4, 4}, g),
                     Tensor::scalar(3.1)},
                    [](Tape& t, const std::vector<ValueId>& v) {
                      return fixnorm_fc(t, v[0], v[1], v[2], 1.0);
                    },
                    g);
  });

  run("fixnorm_conv", [&](std::mt19937_64& g) {
    return check_op({random_tensor({2, 2, 4, 4}, g), random_tensor({3, 2, 3, 3}, g),
                     Tensor::scalar(1.1)},
                    [](Tape& t, const std::vector<ValueId>& v) {
                      return fixnorm_conv(t, v[0], v[1], v[2], 1.0, 1, 1);
                    },
                    g);
  });

  return reports;
}

}  // namespace fixnorm
