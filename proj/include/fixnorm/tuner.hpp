#pragma once

#include <cmath>
#include <functional>
#include <future>
#include <random>
#include <string>
#include <vector>

#include "fixnorm/dataset.hpp"
#include "fixnorm/errors.hpp"
#include "fixnorm/trainer.hpp"

namespace fixnorm {

/// Two-phase tuner configuration: Phase 1 shrinks the learning-rate upper
/// bound across budgets, Phase 2 sweeps the gain-cap coefficient at the best
/// learning rate.
struct TunerConfig {
  int rounds = 2;  // N
  double lr_min = 0.2;
  double lr_max = 3.2;
  int splits = 5;  // K
  std::vector<double> budget_epochs;  // one per round, non-decreasing
  std::vector<double> alphas{0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  int parallelism = 1;
  TrainConfig base;  // template; mode is forced to FIXNORM_FC per trial
};

inline void validate_tuner_config(const TunerConfig& c) {
  if (c.rounds < 1) throw config_error("tuner: rounds must be >= 1");
  if (c.splits < 2) throw config_error("tuner: lr split count must be >= 2");
  if (!(c.lr_min < c.lr_max)) throw config_error("tuner: lr_min must be < lr_max");
  if (c.lr_min <= 0.0) throw config_error("tuner: lr_min must be positive");
  if (c.alphas.empty()) throw config_error("tuner: need at least one alpha candidate");
  for (double a : c.alphas) {
    if (a <= 0.0) throw config_error("tuner: alpha candidates must be positive");
  }
  if (c.budget_epochs.size() != static_cast<std::size_t>(c.rounds)) {
    throw config_error("tuner: need one budget per round");
  }
  for (std::size_t i = 0; i < c.budget_epochs.size(); ++i) {
    if (c.budget_epochs[i] <= 0.0) throw config_error("tuner: budgets must be positive");
    if (i > 0 && c.budget_epochs[i] < c.budget_epochs[i - 1]) {
      throw config_error("tuner: budgets must be non-decreasing");
    }
  }
  if (c.parallelism < 1) throw config_error("tuner: parallelism must be >= 1");
}

/// K split points of (lo, hi]: lo + i*(hi-lo)/K for i = 1..K. Excludes the
/// lower bound, includes the upper.
inline std::vector<double> uniform_split(double lo, double hi, int k) {
  if (!(lo < hi)) throw config_error("uniform_split: invalid range");
  if (k < 1) throw config_error("uniform_split: need at least one point");
  std::vector<double> pts(static_cast<std::size_t>(k));
  const double step = (hi - lo) / static_cast<double>(k);
  for (int i = 1; i <= k; ++i) pts[static_cast<std::size_t>(i - 1)] = lo + step * i;
  pts.back() = hi;  // pin against rounding
  return pts;
}

/// Fractional epoch budgets round up to whole epochs.
inline int budget_to_epochs(double epochs) {
  return static_cast<int>(std::ceil(epochs - 1e-12));
}

/// Total steps the search consumes: K * sum(T_r) + (m-1) * T_{N-1}, with each
/// budget converted to steps through the dataset's steps-per-epoch.
inline long budget_of(const TunerConfig& c, long steps_per_epoch) {
  validate_tuner_config(c);
  if (steps_per_epoch < 1) throw config_error("budget_of: steps per epoch must be >= 1");
  long total = 0;
  for (double b : c.budget_epochs) {
    total += static_cast<long>(c.splits) * budget_to_epochs(b) * steps_per_epoch;
  }
  total += static_cast<long>(c.alphas.size() - 1) *
           budget_to_epochs(c.budget_epochs.back()) * steps_per_epoch;
  return total;
}

struct TrialKey {
  int phase = 1;
  int round = 0;
  int index = 0;
};

struct TrialOutcome {
  double top1 = 0.0;
  bool failed = false;
  long consumed_steps = 0;
  std::string metrics_path;
};

struct TrialRecord {
  int phase = 1;
  int round = 0;
  int index = 0;
  double lr = 0.0;
  double alpha = 0.0;
  long budget_steps = 0;
  int budget_epochs = 0;
  double top1 = 0.0;
  bool failed = false;
  long consumed_steps = 0;
  std::string metrics_path;
};

struct TunerResult {
  double lr_best = 0.0;
  double alpha_best = 0.0;
  double acc_best = 0.0;
  std::vector<TrialRecord> ledger;
  long total_consumed = 0;
};

using TrialFn = std::function<TrialOutcome(double lr, double alpha, int epochs, const TrialKey&)>;

/// One FixNorm training at (lr, alpha) with the epoch count scaled to the
/// budget. Divergence yields a failed outcome with top-1 = 0. Warmup keeps
/// its absolute length but never exceeds half the trial.
inline TrialOutcome run_trial(double lr, double alpha, int epochs, TrainConfig base,
                              const Dataset& train, const Dataset& val,
                              RunResult* full_result = nullptr) {
  base.mode = TrainMode::FIXNORM_FC;
  base.lambda = 0.0;
  base.lambda_fc = 0.0;
  base.lr = lr;
  base.alpha = alpha;
  base.epochs = epochs;
  base.warmup_epochs = std::min(base.warmup_epochs, 0.5 * epochs);
  RunResult r = train_run(base, train, val);
  TrialOutcome out;
  out.top1 = r.failed ? 0.0 : r.final_top1;
  out.failed = r.failed;
  out.consumed_steps = r.steps;
  if (full_result) *full_result = std::move(r);
  return out;
}

namespace detail {

// Runs jobs with bounded concurrency; results land by index, so the outcome
// is independent of scheduling.
inline std::vector<TrialOutcome> run_jobs(const std::vector<std::function<TrialOutcome()>>& jobs,
                                          int width) {
  std::vector<TrialOutcome> results(jobs.size());
  if (width <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = jobs[i]();
    return results;
  }
  for (std::size_t start = 0; start < jobs.size(); start += static_cast<std::size_t>(width)) {
    const std::size_t end = std::min(jobs.size(), start + static_cast<std::size_t>(width));
    std::vector<std::future<TrialOutcome>> futs;
    for (std::size_t i = start; i < end; ++i) {
      futs.push_back(std::async(std::launch::async, jobs[i]));
    }
    for (std::size_t i = start; i < end; ++i) results[i] = futs[i - start].get();
  }
  return results;
}

inline std::size_t first_argmax(const std::vector<TrialOutcome>& outs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < outs.size(); ++i) {
    if (outs[i].top1 > outs[best].top1) best = i;
  }
  return best;
}

}  // namespace detail

/// Phase 1: for each round, evaluate the K uniform split points of
/// [lr_min, lr_max] at that round's budget with the initial alpha, then move
/// lr_max down to the round's argmax. Phase 2: sweep the remaining alpha
/// candidates at the final budget with the best lr. Ties take the lowest
/// index. The global best only updates on a strict improvement.
inline TunerResult tune(const TunerConfig& cfg, const TrialFn& trial) {
  validate_tuner_config(cfg);
  TunerResult res;
  res.alpha_best = cfg.alphas[0];
  double lr_best = std::numeric_limits<double>::quiet_NaN();
  double acc_best = 0.0;
  double lr_max = cfg.lr_max;

  for (int r = 0; r < cfg.rounds; ++r) {
    const std::vector<double> lrs = uniform_split(cfg.lr_min, lr_max, cfg.splits);
    const int epochs = budget_to_epochs(cfg.budget_epochs[static_cast<std::size_t>(r)]);
    std::vector<std::function<TrialOutcome()>> jobs;
    for (std::size_t k = 0; k < lrs.size(); ++k) {
      const TrialKey key{1, r, static_cast<int>(k)};
      const double lr = lrs[k];
      const double alpha = res.alpha_best;
      jobs.emplace_back([&trial, lr, alpha, epochs, key] { return trial(lr, alpha, epochs, key); });
    }
    const auto outs = detail::run_jobs(jobs, cfg.parallelism);
    for (std::size_t k = 0; k < outs.size(); ++k) {
      TrialRecord rec;
      rec.phase = 1;
      rec.round = r;
      rec.index = static_cast<int>(k);
      rec.lr = lrs[k];
      rec.alpha = res.alpha_best;
      rec.budget_epochs = epochs;
      rec.top1 = outs[k].top1;
      rec.failed = outs[k].failed;
      rec.consumed_steps = outs[k].consumed_steps;
      rec.metrics_path = outs[k].metrics_path;
      res.ledger.push_back(rec);
      res.total_consumed += outs[k].consumed_steps;
    }
    const std::size_t idx = detail::first_argmax(outs);
    lr_max = lrs[idx];
    if (outs[idx].top1 > acc_best) {
      acc_best = outs[idx].top1;
      lr_best = lrs[idx];
    }
  }

  if (std::isnan(lr_best)) {
    throw error("tuner: all phase-1 trials failed; no usable learning rate");
  }

  if (cfg.alphas.size() > 1) {
    const int epochs = budget_to_epochs(cfg.budget_epochs.back());
    std::vector<std::function<TrialOutcome()>> jobs;
    for (std::size_t i = 1; i < cfg.alphas.size(); ++i) {
      const TrialKey key{2, 0, static_cast<int>(i - 1)};
      const double alpha = cfg.alphas[i];
      jobs.emplace_back(
          [&trial, lr_best, alpha, epochs, key] { return trial(lr_best, alpha, epochs, key); });
    }
    const auto outs = detail::run_jobs(jobs, cfg.parallelism);
    for (std::size_t i = 0; i < outs.size(); ++i) {
      TrialRecord rec;
      rec.phase = 2;
      rec.round = 0;
      rec.index = static_cast<int>(i);
      rec.lr = lr_best;
      rec.alpha = cfg.alphas[i + 1];
      rec.budget_epochs = epochs;
      rec.top1 = outs[i].top1;
      rec.failed = outs[i].failed;
      rec.consumed_steps = outs[i].consumed_steps;
      rec.metrics_path = outs[i].metrics_path;
      res.ledger.push_back(rec);
      res.total_consumed += outs[i].consumed_steps;
    }
    const std::size_t idx = detail::first_argmax(outs);
    if (outs[idx].top1 > acc_best) {
      acc_best = outs[idx].top1;
      res.alpha_best = cfg.alphas[idx + 1];
    }
  }

  res.lr_best = lr_best;
  res.acc_best = acc_best;
  return res;
}

/// Convenience overload: trials are real FixNorm trainings on the given data.
inline TunerResult tune(const TunerConfig& cfg, const Dataset& train, const Dataset& val) {
  return tune(cfg, [&](double lr, double alpha, int epochs, const TrialKey&) {
    return run_trial(lr, alpha, epochs, cfg.base, train, val);
  });
}

/// Synthetic top-1 landscape for exercising the tuner without training.
/// Separable in lr and alpha; the lr bump is concave in log lr, its argmax
/// moves down as the budget grows, and the achievable height grows with the
/// budget. Matches the two priors the search strategy leans on.
struct SurrogateSpec {
  double lr_star_full = 1.0;    // lr argmax at the full budget
  double budget_full = 20.0;    // epochs of the longest round
  double shift = 0.25;          // argmax(b) = lr_star_full * (budget_full/b)^shift
  double log_width = 0.8;
  double alpha_star = 2.0;
  double alpha_log_width = 1.0;
  double peak = 0.95;           // height at the full budget
  double floor = 0.45;          // height as the budget -> 0
  double noise = 0.0;
  unsigned long seed = 0;
};

inline double surrogate_objective(double lr, double alpha, double budget_epochs,
                                  const SurrogateSpec& s) {
  if (lr <= 0.0 || alpha <= 0.0 || budget_epochs <= 0.0) {
    throw config_error("surrogate_objective: arguments must be positive");
  }
  const double lr_star = s.lr_star_full * std::pow(s.budget_full / budget_epochs, s.shift);
  const double dlr = std::log(lr) - std::log(lr_star);
  const double u = std::exp(-dlr * dlr / (2.0 * s.log_width * s.log_width));
  const double da = std::log(alpha) - std::log(s.alpha_star);
  const double v = 0.7 + 0.3 * std::exp(-da * da / (2.0 * s.alpha_log_width * s.alpha_log_width));
  const double h = s.floor + (s.peak - s.floor) * std::sqrt(std::min(1.0, budget_epochs / s.budget_full));
  double top1 = h * u * v;
  if (s.noise > 0.0) {
    std::seed_seq sq{s.seed, static_cast<unsigned long>(std::llround(lr * 1e9)),
                     static_cast<unsigned long>(std::llround(alpha * 1e9)),
                     static_cast<unsigned long>(std::llround(budget_epochs * 1e6))};
    std::mt19937_64 rng(sq);
    std::normal_distribution<double> n(0.0, s.noise);
    top1 += n(rng);
  }
  return std::clamp(top1, 0.0, 1.0);
}

/// Trial function backed by the surrogate; consumed steps mirror the budget.
inline TrialFn surrogate_trial_fn(const SurrogateSpec& spec, long steps_per_epoch = 1) {
  return [spec, steps_per_epoch](double lr, double alpha, int epochs, const TrialKey&) {
    TrialOutcome out;
    out.top1 = surrogate_objective(lr, alpha, epochs, spec);
    out.consumed_steps = static_cast<long>(epochs) * steps_per_epoch;
    return out;
  };
}

}  // namespace fixnorm
