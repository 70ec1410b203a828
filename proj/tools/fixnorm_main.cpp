#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fixnorm/fixnorm.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

void write_run_outputs(const fixnorm::RunResult& r, const fixnorm::ExperimentConfig& cfg,
                       const std::string& out_dir) {
  fs::create_directories(out_dir);
  fixnorm::write_metrics(r.metrics, (fs::path(out_dir) / "metrics.jsonl").string());
  fixnorm::write_run_result(r, cfg.echo, (fs::path(out_dir) / "result.json").string());
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = fixnorm::load_config(config_path);
  const auto data = fixnorm::load_datasets(cfg);
  const auto result = fixnorm::train_run(cfg.train, data.train, data.val);
  write_run_outputs(result, cfg, out_dir);
  std::printf("mode=%s lr=%g alpha=%g epochs=%d steps=%ld\n",
              fixnorm::to_string(cfg.train.mode).c_str(), cfg.train.lr, cfg.train.alpha,
              cfg.train.epochs, result.steps);
  if (result.failed) {
    std::printf("run FAILED (diverged); top-1 recorded as 0\n");
  } else {
    std::printf("final val top-1 = %.4f, best = %.4f\n", result.final_top1, result.best_top1);
  }
  std::printf("outputs in %s\n", out_dir.c_str());
  return kExitOk;
}

int cmd_tune(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = fixnorm::load_config(config_path);
  const auto data = fixnorm::load_datasets(cfg);
  fs::create_directories(out_dir);

  const long spe = static_cast<long>(data.train.size()) / cfg.train.batch_size;
  std::printf("planned budget: %ld steps (%ld per epoch)\n",
              fixnorm::budget_of(cfg.tuner, spe), spe);

  auto trial_fn = [&](double lr, double alpha, int epochs, const fixnorm::TrialKey& key) {
    fixnorm::RunResult full;
    auto out = fixnorm::run_trial(lr, alpha, epochs, cfg.tuner.base, data.train, data.val, &full);
    char name[64];
    std::snprintf(name, sizeof(name), "trial_p%d_r%d_i%02d", key.phase, key.round, key.index);
    const fs::path dir = fs::path(out_dir) / name;
    fs::create_directories(dir);
    fixnorm::write_metrics(full.metrics, (dir / "metrics.jsonl").string());
    out.metrics_path = (dir / "metrics.jsonl").string();
    return out;
  };

  const auto result = fixnorm::tune(cfg.tuner, trial_fn);
  fixnorm::write_ledger(result.ledger, (fs::path(out_dir) / "ledger.jsonl").string());
  fixnorm::write_tuner_result(result, (fs::path(out_dir) / "result.json").string());
  std::printf("lr_best=%g alpha_best=%g acc_best=%.4f trials=%zu steps=%ld\n", result.lr_best,
              result.alpha_best, result.acc_best, result.ledger.size(), result.total_consumed);
  std::printf("outputs in %s\n", out_dir.c_str());
  return kExitOk;
}

int cmd_gradcheck(unsigned long seed) {
  const auto reports = fixnorm::gradcheck_suite(seed);
  bool all_pass = true;
  for (const auto& r : reports) {
    const bool ok = r.pass();
    all_pass = all_pass && ok;
    std::printf("%-24s max rel err %.3e over %d instances  %s\n", r.op.c_str(), r.max_rel_err,
                r.instances, ok ? "ok" : "FAIL");
  }
  return all_pass ? kExitOk : kExitInternal;
}

int cmd_data_synth(const std::string& config_path, const std::string& out_dir) {
  const auto cfg = fixnorm::load_config(config_path);
  if (cfg.dataset != "blobs") throw fixnorm::config_error("data synth: dataset must be blobs");
  const auto pair = fixnorm::gen_blobs(cfg.blobs);
  fs::create_directories(out_dir);
  for (const fixnorm::Dataset* ds : {&pair.train, &pair.val}) {
    const fs::path path = fs::path(out_dir) / (ds->split + ".csv");
    std::ofstream f(path);
    if (!f) throw fixnorm::io_error("cannot open for writing", path.string());
    const std::size_t d = ds->features.dim(1);
    f << "label";
    for (std::size_t j = 0; j < d; ++j) f << ",x" << j;
    f << "\n";
    for (std::size_t i = 0; i < ds->size(); ++i) {
      f << ds->labels[i];
      for (std::size_t j = 0; j < d; ++j) f << "," << ds->features[i * d + j];
      f << "\n";
    }
    std::printf("wrote %s (%zu samples)\n", path.string().c_str(), ds->size());
  }
  return kExitOk;
}

int cmd_data_inspect(const std::string& config_path) {
  const auto cfg = fixnorm::load_config(config_path);
  const auto data = fixnorm::load_datasets(cfg);
  for (const fixnorm::Dataset* ds : {&data.train, &data.val}) {
    std::vector<std::size_t> histo(static_cast<std::size_t>(ds->classes), 0);
    for (int y : ds->labels) ++histo[static_cast<std::size_t>(y)];
    std::printf("%s: %zu samples, features %s, %d classes\n", ds->split.c_str(), ds->size(),
                ds->features.shape_str().c_str(), ds->classes);
    std::printf("  labels:");
    for (std::size_t c = 0; c < histo.size(); ++c) std::printf(" %zu:%zu", c, histo[c]);
    double mean = 0;
    for (double v : ds->features.data()) mean += v;
    mean /= static_cast<double>(ds->features.size());
    std::printf("\n  feature mean %.5f, norm %.4f\n", mean, ds->features.norm());
  }
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_dir) {
  std::vector<std::string> run_dirs;
  for (const std::string& dir : dirs) {
    if (fs::exists(fs::path(dir) / "ledger.jsonl")) {
      std::printf("%s", fixnorm::report_tuner(dir).c_str());
    } else if (fs::exists(fs::path(dir) / "metrics.jsonl")) {
      run_dirs.push_back(dir);
    } else {
      throw fixnorm::io_error("no metrics.jsonl or ledger.jsonl in", dir);
    }
  }
  if (!run_dirs.empty()) {
    const auto written = fixnorm::report_runs(run_dirs, out_dir);
    for (const auto& p : written) std::printf("wrote %s\n", p.c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FixNorm training laboratory: norm-fixed SGD, capped weight-normalized heads, "
               "MCBR tracking and the two-phase lr/alpha tuner"};
  app.require_subcommand(1);
  app.footer("Config file reference:\n" + fixnorm::config_reference());

  std::string config_path, out_dir = "out";
  unsigned long seed = 0;
  std::vector<std::string> report_dirs;

  auto* train = app.add_subcommand("train", "run one training from a config file");
  train->add_option("--config", config_path, "experiment config file")->required();
  train->add_option("--out", out_dir, "output directory");

  auto* tune = app.add_subcommand("tune", "two-phase lr/alpha search from a config file");
  tune->add_option("--config", config_path, "experiment config file")->required();
  tune->add_option("--out", out_dir, "output directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every operator");
  gradcheck->add_option("--seed", seed, "base seed");

  auto* data = app.add_subcommand("data", "dataset utilities");
  data->require_subcommand(1);
  auto* synth = data->add_subcommand("synth", "generate blob datasets as CSV");
  synth->add_option("--config", config_path, "experiment config file")->required();
  synth->add_option("--out", out_dir, "output directory");
  auto* inspect = data->add_subcommand("inspect", "summarize the configured dataset");
  inspect->add_option("--config", config_path, "experiment config file")->required();

  auto* report = app.add_subcommand("report", "emit CSV tables / tuner summaries for run dirs");
  report->add_option("dirs", report_dirs, "run or tune output directories")->required();
  report->add_option("--out", out_dir, "directory for CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, out_dir);
    if (*tune) return cmd_tune(config_path, out_dir);
    if (*gradcheck) return cmd_gradcheck(seed);
    if (*data) {
      if (*synth) return cmd_data_synth(config_path, out_dir);
      return cmd_data_inspect(config_path);
    }
    if (*report) return cmd_report(report_dirs, out_dir);
  } catch (const fixnorm::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
