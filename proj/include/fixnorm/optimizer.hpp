#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fixnorm/errors.hpp"
#include "fixnorm/tensor.hpp"

namespace fixnorm {

/// A named set of parameters sharing decay / norm-fixing behavior. Members
/// are non-owning pointers into the model. A group is either norm-fixed or
/// decayed, never both.
struct ParamGroup {
  std::string name;
  std::vector<Tensor*> params;
  bool norm_fixed = false;
  double weight_decay = 0.0;
  double initial_norm = -1.0;  // < 0 means not yet captured

  double current_norm() const { return joint_norm(params); }
};

inline void validate_groups(const std::vector<ParamGroup>& groups) {
  for (const ParamGroup& g : groups) {
    if (g.norm_fixed && g.weight_decay > 0.0) {
      throw config_error("param group '" + g.name + "': norm_fixed and weight decay are mutually exclusive");
    }
    if (g.weight_decay < 0.0) {
      throw config_error("param group '" + g.name + "': negative weight decay");
    }
    if (g.norm_fixed && g.params.empty()) {
      throw config_error("param group '" + g.name + "': norm_fixed group has no members");
    }
  }
}

/// Stores the joint norm of every norm-fixed group. Must run once, before the
/// first optimizer step.
inline void capture_initial_norms(std::vector<ParamGroup>& groups) {
  for (ParamGroup& g : groups) {
    if (!g.norm_fixed) continue;
    if (g.initial_norm >= 0.0) {
      throw state_error("capture_initial_norms: group '" + g.name + "' already captured");
    }
    g.initial_norm = g.current_norm();
    if (g.initial_norm == 0.0) {
      throw degenerate_error("capture_initial_norms: group '" + g.name + "' has zero norm");
    }
  }
}

/// Rescales every member so the joint norm returns to its captured value.
/// Runs after each optimizer step on designated groups.
inline void fix_group_norm(ParamGroup& group) {
  if (!group.norm_fixed) throw state_error("fix_group_norm: group '" + group.name + "' is not norm_fixed");
  if (group.initial_norm < 0.0) throw state_error("fix_group_norm: initial norm not captured");
  const double cur = group.current_norm();
  if (cur == 0.0) throw degenerate_error("fix_group_norm: current norm is zero");
  const double scale = group.initial_norm / cur;
  for (Tensor* p : group.params) *p *= scale;
}

/// Warmup-cosine learning-rate multiplier. Linear ramp over the first
/// warmup_steps, then half a cosine down to ~0 at the final step.
struct Schedule {
  long total_steps = 0;
  long warmup_steps = 0;

  Schedule() = default;
  Schedule(long total, long warmup) : total_steps(total), warmup_steps(warmup) {
    if (total <= 0) throw config_error("schedule: total steps must be positive");
    if (warmup >= total) throw config_error("schedule: warmup must end before the last step");
    if (warmup < 0) throw config_error("schedule: negative warmup");
  }
};

inline double lr_multiplier(long t, const Schedule& s) {
  if (t < 0 || t >= s.total_steps) throw config_error("lr_multiplier: step out of range");
  if (t < s.warmup_steps) {
    return static_cast<double>(t + 1) / static_cast<double>(s.warmup_steps);
  }
  const double progress = static_cast<double>(t - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// SGD with momentum over parameter groups. Velocity starts at zero. The
/// update is
///   gt <- grad + lambda * W          (groups with decay)
///   V  <- mu * V + gt
///   W  <- W - lr * eta * V           (heavy ball)
///   W  <- W - lr * eta * (gt + mu*V) (nesterov)
/// followed by the norm-fix rescale of every norm_fixed group.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ParamGroup> groups, double lr, double momentum, bool nesterov)
      : groups_(std::move(groups)), lr_(lr), momentum_(momentum), nesterov_(nesterov) {
    validate_groups(groups_);
    for (const ParamGroup& g : groups_) {
      for (Tensor* p : g.params) {
        params_.push_back(p);
        decay_.push_back(g.weight_decay);
        velocity_.push_back(Tensor::zeros_like(*p));
      }
    }
  }

  const std::vector<Tensor*>& parameters() const { return params_; }
  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  long step_count() const { return step_; }

  void capture_initial_norms() { fixnorm::capture_initial_norms(groups_); }

  /// grads must be aligned with parameters().
  void step(std::span<const Tensor> grads, double eta) {
    if (grads.size() != params_.size()) throw shape_error("optimizer: gradient count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!grads[i].all_finite()) {
        throw divergence_error("optimizer: non-finite gradient", step_);
      }
      Tensor& w = *params_[i];
      Tensor& v = velocity_[i];
      const double lam = decay_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gt = grads[i][j] + lam * w[j];
        v[j] = momentum_ * v[j] + gt;
        const double dir = nesterov_ ? gt + momentum_ * v[j] : v[j];
        w[j] -= lr_ * eta * dir;
      }
    }
    for (ParamGroup& g : groups_) {
      if (g.norm_fixed) fix_group_norm(g);
    }
    ++step_;
  }

 private:
  std::vector<ParamGroup> groups_;
  std::vector<Tensor*> params_;
  std::vector<double> decay_;
  std::vector<Tensor> velocity_;
  double lr_;
  double momentum_;
  bool nesterov_;
  long step_ = 0;
};

}  // namespace fixnorm
