#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fixnorm/errors.hpp"
#include "fixnorm/trainer.hpp"
#include "fixnorm/tuner.hpp"

namespace fixnorm {

/// One JSON object per epoch. Doubles serialize with round-trip precision.
inline void write_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open metrics file for writing", path);
  for (const MetricsRecord& r : records) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"step", r.step},
                     {"lr_mult", r.lr_mult},
                     {"train_loss", r.train_loss},
                     {"val_top1", r.val_top1},
                     {"group_norm", r.group_norm},
                     {"head_gain", r.head_gain},
                     {"mcbr_train", r.mcbr_train},
                     {"mcbr_val", r.mcbr_val}};
    f << j.dump() << "\n";
  }
  if (!f) throw io_error("write failed", path);
}

inline std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open metrics file", path);
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw format_error("metrics: invalid JSON line in " + path);
    MetricsRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.step = j.at("step").get<long>();
    r.lr_mult = j.at("lr_mult").get<double>();
    r.train_loss = j.at("train_loss").get<double>();
    r.val_top1 = j.at("val_top1").get<double>();
    r.group_norm = j.at("group_norm").get<double>();
    r.head_gain = j.at("head_gain").get<double>();
    r.mcbr_train = j.at("mcbr_train").get<double>();
    r.mcbr_val = j.at("mcbr_val").get<double>();
    out.push_back(r);
  }
  return out;
}

inline void write_run_result(const RunResult& r, const std::map<std::string, std::string>& config_echo,
                             const std::string& path) {
  nlohmann::json j{{"final_top1", r.final_top1}, {"best_top1", r.best_top1},
                   {"failed", r.failed},         {"steps", r.steps},
                   {"group_norm_initial", r.group_norm_initial},
                   {"group_norm_min", r.group_norm_min},
                   {"group_norm_max", r.group_norm_max},
                   {"config", config_echo}};
  std::ofstream f(path);
  if (!f) throw io_error("cannot open result file for writing", path);
  f << j.dump(2) << "\n";
}

inline void write_ledger(const std::vector<TrialRecord>& ledger, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot open ledger file for writing", path);
  for (const TrialRecord& r : ledger) {
    nlohmann::json j{{"phase", r.phase},
                     {"round", r.round},
                     {"index", r.index},
                     {"lr", r.lr},
                     {"alpha", r.alpha},
                     {"budget_epochs", r.budget_epochs},
                     {"top1", r.top1},
                     {"failed", r.failed},
                     {"consumed_steps", r.consumed_steps},
                     {"metrics_path", r.metrics_path}};
    f << j.dump() << "\n";
  }
}

inline std::vector<TrialRecord> read_ledger(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open ledger file", path);
  std::vector<TrialRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw format_error("ledger: invalid JSON line in " + path);
    TrialRecord r;
    r.phase = j.at("phase").get<int>();
    r.round = j.at("round").get<int>();
    r.index = j.at("index").get<int>();
    r.lr = j.at("lr").get<double>();
    r.alpha = j.at("alpha").get<double>();
    r.budget_epochs = j.at("budget_epochs").get<int>();
    r.top1 = j.at("top1").get<double>();
    r.failed = j.at("failed").get<bool>();
    r.consumed_steps = j.at("consumed_steps").get<long>();
    r.metrics_path = j.at("metrics_path").get<std::string>();
    out.push_back(r);
  }
  return out;
}

inline void write_tuner_result(const TunerResult& r, const std::string& path) {
  nlohmann::json j{{"lr_best", r.lr_best},
                   {"alpha_best", r.alpha_best},
                   {"acc_best", r.acc_best},
                   {"total_consumed_steps", r.total_consumed},
                   {"trials", r.ledger.size()}};
  std::ofstream f(path);
  if (!f) throw io_error("cannot open result file for writing", path);
  f << j.dump(2) << "\n";
}

namespace detail {

inline std::string fmt_full(double v) {
  return nlohmann::json(v).dump();  // shortest round-trip representation
}

}  // namespace detail

/// Emits one CSV per metric across the given run directories (each holding a
/// metrics.jsonl): column 1 = epoch, one column per run. Returns the paths
/// written.
inline std::vector<std::string> report_runs(const std::vector<std::string>& run_dirs,
                                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  static const char* kMetrics[] = {"train_loss", "val_top1",  "group_norm",
                                   "head_gain",  "mcbr_train", "mcbr_val", "lr_mult"};
  std::vector<std::vector<MetricsRecord>> runs;
  std::vector<std::string> names;
  for (const std::string& dir : run_dirs) {
    runs.push_back(read_metrics((fs::path(dir) / "metrics.jsonl").string()));
    names.push_back(fs::path(dir).filename().string());
  }
  fs::create_directories(out_dir);

  auto field = [](const MetricsRecord& r, const std::string& m) {
    if (m == "train_loss") return r.train_loss;
    if (m == "val_top1") return r.val_top1;
    if (m == "group_norm") return r.group_norm;
    if (m == "head_gain") return r.head_gain;
    if (m == "mcbr_train") return r.mcbr_train;
    if (m == "mcbr_val") return r.mcbr_val;
    return r.lr_mult;
  };

  std::size_t max_epochs = 0;
  for (const auto& r : runs) max_epochs = std::max(max_epochs, r.size());

  std::vector<std::string> written;
  for (const char* metric : kMetrics) {
    const std::string path = (fs::path(out_dir) / ("report_" + std::string(metric) + ".csv")).string();
    std::ofstream f(path);
    if (!f) throw io_error("cannot open report file for writing", path);
    f << "epoch";
    for (const std::string& n : names) f << "," << n;
    f << "\n";
    for (std::size_t e = 0; e < max_epochs; ++e) {
      f << (e + 1);
      for (const auto& r : runs) {
        f << ",";
        if (e < r.size()) f << detail::fmt_full(field(r[e], metric));
      }
      f << "\n";
    }
    written.push_back(path);
  }
  return written;
}

/// Human-readable trial table plus the total-steps line for a tune output
/// directory (one holding ledger.jsonl).
inline std::string report_tuner(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto ledger = read_ledger((fs::path(dir) / "ledger.jsonl").string());
  std::ostringstream os;
  os << "phase round index        lr     alpha  epochs     top1  failed\n";
  long total = 0;
  char buf[160];
  for (const TrialRecord& r : ledger) {
    std::snprintf(buf, sizeof(buf), "%5d %5d %5d %9.4f %9.4f %7d %8.4f %7s\n", r.phase, r.round,
                  r.index, r.lr, r.alpha, r.budget_epochs, r.top1, r.failed ? "yes" : "no");
    os << buf;
    total += r.consumed_steps;
  }
  os << "total trials: " << ledger.size() << ", total steps consumed: " << total << "\n";
  return os.str();
}

}  // namespace fixnorm
