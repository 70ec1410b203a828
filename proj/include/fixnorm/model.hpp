#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fixnorm/autodiff.hpp"
#include "fixnorm/errors.hpp"
#include "fixnorm/heads.hpp"
#include "fixnorm/optimizer.hpp"
#include "fixnorm/tensor.hpp"

namespace fixnorm {

/// Training mode. WD is the weight-decay baseline; ALGO1 fixes the joint conv
/// norm and keeps decay on the final FC only; WN_FC / FIXNORM_FC additionally
/// make the head weight-normalized and fold it into the norm-fixed group.
enum class TrainMode { WD, ALGO1, WN_FC, FIXNORM_FC };

enum class ModelPreset { MlpBlobs, CnnSmall };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::WD: return "WD";
    case TrainMode::ALGO1: return "ALGO1";
    case TrainMode::WN_FC: return "WN_FC";
    case TrainMode::FIXNORM_FC: return "FIXNORM_FC";
  }
  return "?";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "WD") return TrainMode::WD;
  if (s == "ALGO1") return TrainMode::ALGO1;
  if (s == "WN_FC") return TrainMode::WN_FC;
  if (s == "FIXNORM_FC") return TrainMode::FIXNORM_FC;
  throw config_error("unknown mode '" + s + "'");
}

inline std::string to_string(ModelPreset p) {
  return p == ModelPreset::MlpBlobs ? "mlp-blobs" : "cnn-small";
}

inline ModelPreset parse_preset(const std::string& s) {
  if (s == "mlp-blobs") return ModelPreset::MlpBlobs;
  if (s == "cnn-small") return ModelPreset::CnnSmall;
  throw config_error("unknown model preset '" + s + "'");
}

/// One backbone block: (linear | conv3x3) -> BN -> ReLU. Weights carry no
/// bias; the BN shift plays that role.
struct Block {
  bool is_conv = false;
  Tensor weight;          // linear [D,H] or conv [Cout,Cin,3,3]
  std::size_t stride = 1;
  std::size_t pad = 1;
  Tensor gamma, beta;
  BatchNormState bn;

  Block() : bn(0) {}
};

/// A small reference network plus the parameter-group layout the training
/// mode dictates. Biases and BN affine parameters are never norm-fixed.
struct Model {
  ModelPreset preset = ModelPreset::MlpBlobs;
  TrainMode mode = TrainMode::WD;
  double alpha = 1.0;
  int classes = 0;
  std::vector<Block> blocks;
  Tensor head_weight;  // [D,C]
  Tensor head_gain;    // [1], used by WN_FC / FIXNORM_FC

  bool normalized_head() const {
    return mode == TrainMode::WN_FC || mode == TrainMode::FIXNORM_FC;
  }

  double gain_cap() const { return alpha * std::sqrt(static_cast<double>(classes)); }

  /// The gain actually applied by the head this epoch: ||W_fc|| for plain
  /// heads, g for WN-FC, min(g, cap) for FixNorm-FC.
  double recorded_head_gain() const {
    if (mode == TrainMode::FIXNORM_FC) return std::min(head_gain[0], gain_cap());
    if (mode == TrainMode::WN_FC) return head_gain[0];
    return head_weight.norm();
  }

  struct ForwardResult {
    ValueId features = 0;  // penultimate activations [B,D]
    ValueId logits = 0;
    std::vector<std::pair<Tensor*, ValueId>> param_ids;

    ValueId id_of(const Tensor* p) const {
      for (const auto& [ptr, id] : param_ids) {
        if (ptr == p) return id;
      }
      throw state_error("forward: unknown parameter");
    }
  };

  ForwardResult forward(Tape& t, const Tensor& x, bool training) {
    ForwardResult fr;
    ValueId cur = t.leaf(x);
    for (Block& b : blocks) {
      const ValueId w = t.leaf(b.weight);
      const ValueId gamma = t.leaf(b.gamma);
      const ValueId beta = t.leaf(b.beta);
      fr.param_ids.emplace_back(&b.weight, w);
      fr.param_ids.emplace_back(&b.gamma, gamma);
      fr.param_ids.emplace_back(&b.beta, beta);
      ValueId z = b.is_conv ? conv2d(t, cur, w, b.stride, b.pad) : linear(t, cur, w);
      cur = relu(t, batchnorm(t, z, gamma, beta, b.bn, training));
    }
    if (t.value(cur).rank() == 4) cur = global_avg_pool(t, cur);
    fr.features = cur;

    const ValueId hw = t.leaf(head_weight);
    fr.param_ids.emplace_back(&head_weight, hw);
    if (normalized_head()) {
      const ValueId hg = t.leaf(head_gain);
      fr.param_ids.emplace_back(&head_gain, hg);
      const double cap = mode == TrainMode::FIXNORM_FC
                             ? alpha * std::sqrt(static_cast<double>(classes))
                             : std::numeric_limits<double>::infinity();
      fr.logits = capped_wn_fc(t, cur, hw, hg, cap);
    } else {
      fr.logits = linear(t, cur, hw);
    }
    return fr;
  }

  /// Tensors whose joint norm the metrics track: backbone weights in WD and
  /// ALGO1 modes, backbone + head in the weight-normalized modes.
  std::vector<Tensor*> tracked_weights() {
    std::vector<Tensor*> w;
    for (Block& b : blocks) w.push_back(&b.weight);
    if (normalized_head()) w.push_back(&head_weight);
    return w;
  }
};

/// Builds the network for a preset and the parameter groups the mode
/// requires:
///   WD         {backbone: decay} {fc: decay} {free}
///   ALGO1      {backbone: norm_fixed} {fc: decay lambda_fc} {free}
///   WN_FC      {backbone+fc: norm_fixed} {free incl. gain}, no decay
///   FIXNORM_FC same as WN_FC with the capped head
/// The model is heap-allocated so the groups' raw pointers stay valid.
struct BuiltModel {
  std::unique_ptr<Model> model;
  std::vector<ParamGroup> groups;
};

inline BuiltModel build_model(ModelPreset preset, TrainMode mode, double alpha,
                              std::size_t input_dim_or_channels, int classes,
                              std::mt19937_64& rng, double lambda = 0.0,
                              double lambda_fc = 0.0) {
  if (classes < 2) throw config_error("build_model: need at least 2 classes");
  BuiltModel out;
  out.model = std::make_unique<Model>();
  Model& m = *out.model;
  m.preset = preset;
  m.mode = mode;
  m.alpha = alpha;
  m.classes = classes;

  auto he_init = [&rng](Tensor& w, std::size_t fan_in) {
    fill_normal(w, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
  };

  std::size_t feat = 0;
  if (preset == ModelPreset::MlpBlobs) {
    const std::size_t hidden = 32;
    std::size_t in = input_dim_or_channels;
    for (int i = 0; i < 2; ++i) {
      Block b;
      b.is_conv = false;
      b.weight = Tensor({in, hidden});
      he_init(b.weight, in);
      b.gamma = Tensor::full({hidden}, 1.0);
      b.beta = Tensor({hidden});
      b.bn = BatchNormState(hidden);
      m.blocks.push_back(std::move(b));
      in = hidden;
    }
    feat = hidden;
  } else {
    const std::size_t channels[3] = {16, 32, 64};
    std::size_t in = input_dim_or_channels;
    for (std::size_t c : channels) {
      Block b;
      b.is_conv = true;
      b.weight = Tensor({c, in, 3, 3});
      he_init(b.weight, in * 9);
      b.stride = 2;
      b.pad = 1;
      b.gamma = Tensor::full({c}, 1.0);
      b.beta = Tensor({c});
      b.bn = BatchNormState(c);
      m.blocks.push_back(std::move(b));
      in = c;
    }
    feat = channels[2];
  }

  m.head_weight = Tensor({feat, static_cast<std::size_t>(classes)});
  he_init(m.head_weight, feat);
  // gain starts at sqrt(C): the alpha = 1 cap is initially tight-neutral
  m.head_gain = Tensor::scalar(std::sqrt(static_cast<double>(classes)));

  ParamGroup backbone{"conv", {}, false, 0.0, -1.0};
  for (Block& b : m.blocks) backbone.params.push_back(&b.weight);
  ParamGroup fc{"fc", {&m.head_weight}, false, 0.0, -1.0};
  ParamGroup free{"free", {}, false, 0.0, -1.0};
  for (Block& b : m.blocks) {
    free.params.push_back(&b.gamma);
    free.params.push_back(&b.beta);
  }

  switch (mode) {
    case TrainMode::WD:
      backbone.weight_decay = lambda;
      fc.weight_decay = lambda;
      break;
    case TrainMode::ALGO1:
      backbone.norm_fixed = true;
      fc.weight_decay = lambda_fc;
      break;
    case TrainMode::WN_FC:
    case TrainMode::FIXNORM_FC:
      backbone.name = "conv_fc";
      backbone.params.push_back(&m.head_weight);
      backbone.norm_fixed = true;
      fc.params.clear();
      free.params.push_back(&m.head_gain);
      break;
  }

  out.groups.push_back(std::move(backbone));
  if (!fc.params.empty()) out.groups.push_back(std::move(fc));
  out.groups.push_back(std::move(free));
  validate_groups(out.groups);
  return out;
}

}  // namespace fixnorm
