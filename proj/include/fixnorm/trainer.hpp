#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fixnorm/dataset.hpp"
#include "fixnorm/errors.hpp"
#include "fixnorm/heads.hpp"
#include "fixnorm/model.hpp"
#include "fixnorm/optimizer.hpp"
#include "fixnorm/tensor.hpp"

namespace fixnorm {

/// One training run's full recipe.
struct TrainConfig {
  TrainMode mode = TrainMode::FIXNORM_FC;
  double lr = 0.5;
  double alpha = 1.0;      // FixNorm-FC cap coefficient; +inf disables the cap
  double lambda = 0.0;     // global decay, WD mode only
  double lambda_fc = 0.0;  // final-FC decay, ALGO1 mode only
  double momentum = 0.9;
  bool nesterov = true;
  double label_smoothing = 0.1;
  int epochs = 20;
  int batch_size = 64;
  double warmup_epochs = 4.0;
  unsigned long seed = 1;
  ModelPreset preset = ModelPreset::MlpBlobs;
  int mcbr_samples = 2048;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.lr <= 0.0) throw config_error("lr must be positive");
  if (c.alpha <= 0.0) throw config_error("alpha must be positive");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw config_error("momentum must be in [0,1)");
  if (c.label_smoothing < 0.0 || c.label_smoothing >= 1.0) {
    throw config_error("label_smoothing must be in [0,1)");
  }
  if (c.epochs < 1) throw config_error("epochs must be >= 1");
  if (c.batch_size < 2) throw config_error("batch_size must be >= 2");
  if (c.warmup_epochs < 0.0) throw config_error("warmup_epochs must be >= 0");
  if (c.warmup_epochs >= c.epochs) throw config_error("warmup_epochs must be < epochs");
  if (c.lambda < 0.0 || c.lambda_fc < 0.0) throw config_error("negative weight decay");
  const bool wn_mode = c.mode == TrainMode::WN_FC || c.mode == TrainMode::FIXNORM_FC;
  if (wn_mode && (c.lambda > 0.0 || c.lambda_fc > 0.0)) {
    throw config_error("modes WN_FC/FIXNORM_FC train without any weight decay");
  }
  if (c.mode == TrainMode::ALGO1 && c.lambda > 0.0) {
    throw config_error("mode ALGO1 uses lambda_fc on the final FC only; global lambda must be 0");
  }
  if (c.mode == TrainMode::WD && c.lambda_fc > 0.0) {
    throw config_error("mode WD uses the global lambda; lambda_fc must be 0");
  }
}

/// Deterministic epoch-wise shuffling: the permutation depends only on
/// (seed, epoch), the batch only on (seed, t). The trailing partial batch of
/// each epoch is dropped.
struct BatchSampler {
  const Dataset* data;
  std::size_t batch_size;
  unsigned long seed;
  std::size_t steps_per_epoch;

  BatchSampler(const Dataset& ds, std::size_t batch, unsigned long sd)
      : data(&ds), batch_size(batch), seed(sd), steps_per_epoch(ds.size() / batch) {
    if (ds.size() == 0) throw config_error("batch_sampler: empty dataset");
    if (steps_per_epoch == 0) throw config_error("batch_sampler: batch size exceeds dataset");
  }

  std::vector<std::size_t> epoch_permutation(std::size_t epoch) const {
    std::vector<std::size_t> idx(data->size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::seed_seq sq{seed, static_cast<unsigned long>(epoch)};
    std::mt19937_64 rng(sq);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
  }

  /// Batch for global step t.
  void batch(long t, Tensor& x, std::vector<int>& y) const {
    const std::size_t epoch = static_cast<std::size_t>(t) / steps_per_epoch;
    const std::size_t pos = (static_cast<std::size_t>(t) % steps_per_epoch) * batch_size;
    const auto perm = epoch_permutation(epoch);
    std::vector<std::size_t> shape = data->features.shape();
    const std::size_t row = data->features.size() / shape[0];
    shape[0] = batch_size;
    x = Tensor(shape);
    y.resize(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t src = perm[pos + i];
      for (std::size_t j = 0; j < row; ++j) x[i * row + j] = data->features[src * row + j];
      y[i] = data->labels[src];
    }
  }
};

/// Argmax-logit accuracy; ties go to the lowest class index. Runs the network
/// in eval mode (running BN statistics).
inline double evaluate_top1(Model& model, const Dataset& ds, std::size_t chunk = 256) {
  std::size_t correct = 0;
  const std::size_t n = ds.size();
  const std::size_t row = ds.features.size() / n;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t cnt = std::min(chunk, n - start);
    std::vector<std::size_t> shape = ds.features.shape();
    shape[0] = cnt;
    Tensor x(shape);
    for (std::size_t i = 0; i < cnt * row; ++i) x[i] = ds.features[start * row + i];
    Tape t;
    auto fr = model.forward(t, x, /*training=*/false);
    const Tensor& logits = t.value(fr.logits);
    const std::size_t c = logits.dim(1);
    for (std::size_t i = 0; i < cnt; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (logits[i * c + j] > logits[i * c + best]) best = j;
      }
      if (static_cast<int>(best) == ds.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

/// Penultimate features for the first `limit` samples of a split, eval mode.
inline std::pair<Tensor, std::vector<int>> penultimate_features(Model& model,
                                                                const Dataset& ds,
                                                                std::size_t limit) {
  const std::size_t n = std::min<std::size_t>(ds.size(), limit);
  const std::size_t row = ds.features.size() / ds.size();
  std::vector<std::size_t> shape = ds.features.shape();
  shape[0] = n;
  Tensor x(shape);
  for (std::size_t i = 0; i < n * row; ++i) x[i] = ds.features[i];
  Tape t;
  auto fr = model.forward(t, x, /*training=*/false);
  return {t.value(fr.features), {ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(n)}};
}

/// Per-epoch snapshot of the quantities the method tracks.
struct MetricsRecord {
  int epoch = 0;
  long step = 0;
  double lr_mult = 0.0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double group_norm = 0.0;
  double head_gain = 0.0;
  double mcbr_train = 0.0;
  double mcbr_val = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct RunResult {
  double final_top1 = 0.0;
  double best_top1 = 0.0;
  bool failed = false;
  long steps = 0;
  std::vector<MetricsRecord> metrics;
  // per-step extremes of the tracked joint weight norm
  double group_norm_initial = 0.0;
  double group_norm_min = 0.0;
  double group_norm_max = 0.0;
};

/// Runs one full training under the configured mode and records one
/// MetricsRecord per epoch. A non-finite loss or gradient marks the run
/// failed with top-1 = 0 instead of raising.
inline RunResult train_run(const TrainConfig& cfg, const Dataset& train, const Dataset& val) {
  validate_train_config(cfg);
  if (train.classes < 2) throw config_error("train_run: need at least 2 classes");

  // cnn-small consumes images; flat feature datasets are reshaped to 1xkxk
  Dataset reshaped_train, reshaped_val;
  const Dataset* trp = &train;
  const Dataset* vap = &val;
  if (cfg.preset == ModelPreset::CnnSmall && train.features.rank() == 2) {
    reshaped_train = as_images(train);
    reshaped_val = as_images(val);
    trp = &reshaped_train;
    vap = &reshaped_val;
  }
  const Dataset& tr_local = *trp;
  const Dataset& va_local = *vap;

  // feature dimension for the MLP, input channels for the CNN
  const std::size_t input_dim = tr_local.features.dim(1);

  std::mt19937_64 rng(cfg.seed);
  BuiltModel built = build_model(cfg.preset, cfg.mode, cfg.alpha, input_dim, tr_local.classes,
                                 rng, cfg.lambda, cfg.lambda_fc);
  Model& model = *built.model;

  SgdOptimizer opt(std::move(built.groups), cfg.lr, cfg.momentum, cfg.nesterov);
  opt.capture_initial_norms();

  BatchSampler sampler(tr_local, static_cast<std::size_t>(cfg.batch_size), cfg.seed);
  const long spe = static_cast<long>(sampler.steps_per_epoch);
  const long total = spe * cfg.epochs;
  const long warmup = std::lround(cfg.warmup_epochs * static_cast<double>(spe));
  Schedule sched(total, std::min(warmup, total - 1));

  const std::vector<Tensor*> tracked = model.tracked_weights();
  auto tracked_norm = [&tracked] { return joint_norm(tracked); };

  RunResult result;
  result.group_norm_initial = tracked_norm();
  result.group_norm_min = result.group_norm_max = result.group_norm_initial;

  const auto mcbr_limit = static_cast<std::size_t>(cfg.mcbr_samples);
  Tensor xb;
  std::vector<int> yb;
  double epoch_loss = 0.0;
  double last_mult = 0.0;

  for (long t = 0; t < total; ++t) {
    sampler.batch(t, xb, yb);
    Tape tape;
    auto fr = model.forward(tape, xb, /*training=*/true);
    const ValueId loss = softmax_ce(tape, fr.logits, yb, cfg.label_smoothing);
    const double loss_v = tape.value(loss)[0];
    if (!std::isfinite(loss_v)) {
      result.failed = true;
      break;
    }
    tape.backward(loss);

    std::vector<Tensor> grads;
    grads.reserve(opt.parameters().size());
    for (Tensor* p : opt.parameters()) grads.push_back(tape.grad(fr.id_of(p)));

    last_mult = lr_multiplier(t, sched);
    try {
      opt.step(grads, last_mult);
    } catch (const divergence_error&) {
      result.failed = true;
      break;
    }
    ++result.steps;
    epoch_loss += loss_v;

    const double nrm = tracked_norm();
    result.group_norm_min = std::min(result.group_norm_min, nrm);
    result.group_norm_max = std::max(result.group_norm_max, nrm);

    if ((t + 1) % spe == 0) {
      MetricsRecord rec;
      rec.epoch = static_cast<int>((t + 1) / spe);
      rec.step = t + 1;
      rec.lr_mult = last_mult;
      rec.train_loss = epoch_loss / static_cast<double>(spe);
      rec.val_top1 = evaluate_top1(model, va_local);
      rec.group_norm = tracked_norm();
      rec.head_gain = model.recorded_head_gain();
      auto [ftr, ltr] = penultimate_features(model, tr_local, mcbr_limit);
      rec.mcbr_train = mcbr(ftr, ltr, model.head_weight).mean;
      auto [fva, lva] = penultimate_features(model, va_local, mcbr_limit);
      rec.mcbr_val = mcbr(fva, lva, model.head_weight).mean;
      result.metrics.push_back(rec);
      epoch_loss = 0.0;
    }
  }

  if (result.failed) {
    result.final_top1 = 0.0;
    result.best_top1 = 0.0;
    return result;
  }
  result.final_top1 = result.metrics.empty() ? 0.0 : result.metrics.back().val_top1;
  for (const MetricsRecord& r : result.metrics) {
    result.best_top1 = std::max(result.best_top1, r.val_top1);
  }
  return result;
}

}  // namespace fixnorm
