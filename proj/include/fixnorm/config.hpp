#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fixnorm/dataset.hpp"
#include "fixnorm/errors.hpp"
#include "fixnorm/trainer.hpp"
#include "fixnorm/tuner.hpp"

namespace fixnorm {

/// Flat key-value experiment file: one `key = value` per line, '#' comments.
/// Unknown keys are rejected; missing keys take the documented defaults.
struct ExperimentConfig {
  TrainConfig train;
  // dataset selection
  std::string dataset = "blobs";  // blobs | mnist | cifar10
  std::string data_dir;
  std::size_t train_limit = 0;  // 0 = all samples
  bool normalize = true;
  SynthSpec blobs;
  // tuner
  TunerConfig tuner;
  bool budgets_given = false;

  std::map<std::string, std::string> echo;  // resolved key/value pairs
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw config_error("key '" + key + "': trailing characters in '" + v + "'");
  return out;
}

inline long parse_long(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long out;
  try {
    out = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw config_error("key '" + key + "': trailing characters in '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw config_error("key '" + key + "': empty list");
  return out;
}

}  // namespace detail

inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("config line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw config_error("duplicate key '" + key + "'");
    kv[key] = val;
  }
  return kv;
}

/// The full key set with defaults; shown by the CLI's --help.
inline std::string config_reference() {
  return R"(# training
mode = FIXNORM_FC          # WD | ALGO1 | WN_FC | FIXNORM_FC
lr = 0.5
alpha = 1.0                # gain cap coefficient; 'inf' disables the cap
lambda = 0.0               # global weight decay (WD mode only)
lambda_fc = 0.0            # final-FC weight decay (ALGO1 mode only)
momentum = 0.9
nesterov = true            # false = heavy-ball
label_smoothing = 0.1
epochs = 20
batch_size = 64
warmup_epochs = 4
seed = 1
model = mlp-blobs          # mlp-blobs | cnn-small
mcbr_samples = 2048
# data
dataset = blobs            # blobs | mnist | cifar10
data_dir =                 # directory with IDX / CIFAR-10 binaries
train_limit = 0            # keep first N training samples (0 = all)
normalize = true           # standardize with training-split statistics
blob_classes = 4
blob_dim = 16
blob_separation = 4.0
blob_sigma = 1.0
blob_samples_per_class = 500
# tuner
tuner_rounds = 2
lr_min = 0.2
lr_max = 3.2
lr_splits = 5
budget_epochs =            # per-round epochs; default 0.2*epochs,epochs
alphas = 0.5,1.0,2.0,4.0,8.0,16.0
parallel_trials = 1
)";
}

inline ExperimentConfig config_from_kv(const std::map<std::string, std::string>& kv) {
  ExperimentConfig c;
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_list;
  using detail::parse_long;

  for (const auto& [key, val] : kv) {
    if (key == "mode") c.train.mode = parse_mode(val);
    else if (key == "lr") c.train.lr = parse_double(key, val);
    else if (key == "alpha") c.train.alpha = parse_double(key, val);
    else if (key == "lambda") c.train.lambda = parse_double(key, val);
    else if (key == "lambda_fc") c.train.lambda_fc = parse_double(key, val);
    else if (key == "momentum") c.train.momentum = parse_double(key, val);
    else if (key == "nesterov") c.train.nesterov = parse_bool(key, val);
    else if (key == "label_smoothing") c.train.label_smoothing = parse_double(key, val);
    else if (key == "epochs") c.train.epochs = static_cast<int>(parse_long(key, val));
    else if (key == "batch_size") c.train.batch_size = static_cast<int>(parse_long(key, val));
    else if (key == "warmup_epochs") c.train.warmup_epochs = parse_double(key, val);
    else if (key == "seed") c.train.seed = static_cast<unsigned long>(parse_long(key, val));
    else if (key == "model") c.train.preset = parse_preset(val);
    else if (key == "mcbr_samples") c.train.mcbr_samples = static_cast<int>(parse_long(key, val));
    else if (key == "dataset") c.dataset = val;
    else if (key == "data_dir") c.data_dir = val;
    else if (key == "train_limit") c.train_limit = static_cast<std::size_t>(parse_long(key, val));
    else if (key == "normalize") c.normalize = parse_bool(key, val);
    else if (key == "blob_classes") c.blobs.classes = static_cast<int>(parse_long(key, val));
    else if (key == "blob_dim") c.blobs.dim = static_cast<int>(parse_long(key, val));
    else if (key == "blob_separation") c.blobs.separation = parse_double(key, val);
    else if (key == "blob_sigma") c.blobs.sigma = parse_double(key, val);
    else if (key == "blob_samples_per_class") c.blobs.samples_per_class = static_cast<int>(parse_long(key, val));
    else if (key == "tuner_rounds") c.tuner.rounds = static_cast<int>(parse_long(key, val));
    else if (key == "lr_min") c.tuner.lr_min = parse_double(key, val);
    else if (key == "lr_max") c.tuner.lr_max = parse_double(key, val);
    else if (key == "lr_splits") c.tuner.splits = static_cast<int>(parse_long(key, val));
    else if (key == "budget_epochs") {
      c.tuner.budget_epochs = parse_list(key, val);
      c.budgets_given = true;
    } else if (key == "alphas") c.tuner.alphas = parse_list(key, val);
    else if (key == "parallel_trials") c.tuner.parallelism = static_cast<int>(parse_long(key, val));
    else throw config_error("unknown key '" + key + "'");
  }

  if (c.dataset != "blobs" && c.dataset != "mnist" && c.dataset != "cifar10") {
    throw config_error("key 'dataset': expected blobs|mnist|cifar10, got '" + c.dataset + "'");
  }
  if ((c.dataset == "mnist" || c.dataset == "cifar10") && c.data_dir.empty()) {
    throw config_error("key 'data_dir': required for dataset " + c.dataset);
  }
  c.blobs.seed = c.train.seed;
  validate_train_config(c.train);

  if (!c.budgets_given) {
    c.tuner.budget_epochs = {std::ceil(0.2 * c.train.epochs), static_cast<double>(c.train.epochs)};
    c.tuner.rounds = 2;
  }
  c.tuner.base = c.train;
  validate_tuner_config(c.tuner);

  c.echo = kv;
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config file", path);
  return config_from_kv(parse_key_values(f));
}

/// Builds the datasets the config names. Blobs are generated; MNIST and
/// CIFAR-10 load from data_dir. Normalization statistics always come from
/// the training split.
inline DatasetPair load_datasets(const ExperimentConfig& c) {
  DatasetPair pair;
  if (c.dataset == "blobs") {
    pair = gen_blobs(c.blobs);
  } else if (c.dataset == "mnist") {
    pair.train = read_idx(c.data_dir + "/train-images-idx3-ubyte",
                          c.data_dir + "/train-labels-idx1-ubyte", "train");
    pair.val = read_idx(c.data_dir + "/t10k-images-idx3-ubyte",
                        c.data_dir + "/t10k-labels-idx1-ubyte", "val");
  } else {
    Dataset all;
    for (int i = 1; i <= 5; ++i) {
      Dataset part = read_cifar10(c.data_dir + "/data_batch_" + std::to_string(i) + ".bin", "train");
      if (i == 1) {
        all = std::move(part);
      } else {
        std::vector<double> merged(all.features.data().begin(), all.features.data().end());
        merged.insert(merged.end(), part.features.data().begin(), part.features.data().end());
        std::vector<std::size_t> shape = all.features.shape();
        shape[0] += part.features.dim(0);
        all.features = Tensor(shape, std::move(merged));
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
      }
    }
    pair.train = std::move(all);
    pair.val = read_cifar10(c.data_dir + "/test_batch.bin", "val");
  }
  if (c.train_limit > 0) pair.train = truncate_dataset(pair.train, c.train_limit);
  if (c.normalize) {
    const NormStats st = compute_norm_stats(pair.train);
    apply_norm_stats(pair.train, st);
    apply_norm_stats(pair.val, st);
  }
  return pair;
}

}  // namespace fixnorm
