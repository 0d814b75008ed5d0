// Command-line surface: dataset generation, training, evaluation, inference,
// ablation sweeps and the oracle verification suite.
//
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 I/O error, 4 numerical abort.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "d2s/config.hpp"
#include "d2s/metrics.hpp"
#include "d2s/synthdata.hpp"
#include "d2s/trainer.hpp"
#include "d2s/verify.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kVerifyFailed = 1,
  kConfigError = 2,
  kIoError = 3,
  kNumericalError = 4,
};

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level() {
  const char* raw = std::getenv("D2S_LOG_LEVEL");
  if (!raw) return LogLevel::kInfo;
  const std::string v(raw);
  if (v == "error") return LogLevel::kError;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> overrides;
};

void add_common_options(CLI::App* cmd, CliOptions& opts, bool with_out) {
  cmd->add_option("--config", opts.config_path, "configuration file (JSON)");
  if (with_out) cmd->add_option("--out", opts.out_dir, "output directory")->required();
  cmd->add_option("--seed", opts.seeds, "seed override (repeatable)");
  cmd->add_option("--set", opts.overrides, "dotted config override key=value (repeatable)");
}

d2s::AppConfig effective_config(const CliOptions& opts) {
  nlohmann::json j = nlohmann::json::object();
  if (!opts.config_path.empty()) j = d2s::load_config_json(opts.config_path);
  for (const auto& assignment : opts.overrides) d2s::apply_override(j, assignment);
  return d2s::parse_app_config(j);
}

void make_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw d2s::IoError("cannot create output directory: " + dir);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw d2s::IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw d2s::IoError("write failed: " + path);
}

int cmd_gen_data(const CliOptions& opts) {
  d2s::AppConfig cfg = effective_config(opts);
  if (!opts.seeds.empty()) cfg.data.seed = opts.seeds.front();
  cfg.data.gen.validate();
  make_out_dir(opts.out_dir);

  const d2s::Dataset data = d2s::generate_dataset(cfg.data.seed, cfg.data.count, cfg.data.gen);
  if (data.empty()) log_info("warning: generated an empty dataset (count = 0)");
  const std::string dataset_path = opts.out_dir + "/dataset.jsonl";
  d2s::write_dataset(data, dataset_path);

  const nlohmann::json manifest = {{"count", data.size()},
                                   {"seed", cfg.data.seed},
                                   {"gt_decile_counts", d2s::gt_decile_histogram(data)}};
  write_file(opts.out_dir + "/manifest.json", manifest.dump(2) + "\n");
  log_info("wrote " + std::to_string(data.size()) + " samples to " + dataset_path);
  return kOk;
}

void write_metrics_files(const d2s::MetricsReport& report, const std::string& dir) {
  write_file(dir + "/metrics.csv",
             d2s::metrics_csv_header() + "\n" + d2s::metrics_csv_row(report) + "\n");
  write_file(dir + "/metrics.txt", d2s::metrics_text(report));
}

int cmd_train(const CliOptions& opts) {
  d2s::AppConfig cfg = effective_config(opts);
  if (cfg.data.train_path.empty()) {
    throw d2s::ConfigError("data.train_path is required for training");
  }
  const d2s::Dataset train_data = d2s::read_dataset(cfg.data.train_path);
  d2s::Dataset test_data;
  if (!cfg.data.test_path.empty()) test_data = d2s::read_dataset(cfg.data.test_path);

  std::vector<std::uint64_t> seeds = opts.seeds;
  if (seeds.empty()) seeds.push_back(cfg.train.seed);

  for (std::uint64_t seed : seeds) {
    d2s::AppConfig run_cfg = cfg;
    run_cfg.train.seed = seed;
    const std::string run_dir =
        seeds.size() == 1 ? opts.out_dir : opts.out_dir + "/seed_" + std::to_string(seed);
    make_out_dir(run_dir);
    write_file(run_dir + "/app_config.json", d2s::app_config_to_json(run_cfg).dump(2) + "\n");

    log_info("training seed " + std::to_string(seed) + " into " + run_dir);
    const d2s::TrainResult result = d2s::train(run_cfg.train, train_data, run_dir);
    log_debug("finished " + std::to_string(result.log.size()) + " iterations");

    const d2s::MetricsReport report =
        d2s::evaluate(result.checkpoint, test_data.empty() ? train_data : test_data);
    write_metrics_files(report, run_dir);
    log_info("seed " + std::to_string(seed) + ": " + d2s::metrics_csv_row(report));
  }
  return kOk;
}

int cmd_eval(const CliOptions& opts) {
  const d2s::AppConfig cfg = effective_config(opts);
  if (cfg.eval_checkpoint.empty() || cfg.eval_data.empty()) {
    throw d2s::ConfigError("eval.checkpoint and eval.data are required");
  }
  const d2s::Checkpoint ck = d2s::load_checkpoint(cfg.eval_checkpoint);
  const d2s::Dataset data = d2s::read_dataset(cfg.eval_data);
  const d2s::MetricsReport report = d2s::evaluate(ck, data);
  make_out_dir(opts.out_dir);
  write_metrics_files(report, opts.out_dir);
  std::cout << d2s::metrics_text(report);
  return kOk;
}

int cmd_infer(const CliOptions& opts) {
  const d2s::AppConfig cfg = effective_config(opts);
  if (cfg.infer_checkpoint.empty() || cfg.infer_data.empty()) {
    throw d2s::ConfigError("infer.checkpoint and infer.data are required");
  }
  const d2s::Checkpoint ck = d2s::load_checkpoint(cfg.infer_checkpoint);
  const d2s::Dataset data = d2s::read_dataset(cfg.infer_data);
  std::vector<d2s::Vector> images;
  images.reserve(data.size());
  for (const auto& s : data) images.push_back(s.image);
  const std::vector<double> scores = d2s::infer(ck, images);

  make_out_dir(opts.out_dir);
  std::ostringstream csv;
  csv.precision(17);
  csv << "index,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) csv << i << ',' << scores[i] << '\n';
  write_file(opts.out_dir + "/scores.csv", csv.str());
  log_info("scored " + std::to_string(scores.size()) + " images");
  return kOk;
}

int cmd_ablate(const CliOptions& opts) {
  d2s::AppConfig cfg = effective_config(opts);
  if (cfg.data.train_path.empty() || cfg.data.test_path.empty()) {
    throw d2s::ConfigError("data.train_path and data.test_path are required for ablation");
  }
  const d2s::Dataset train_data = d2s::read_dataset(cfg.data.train_path);
  const d2s::Dataset test_data = d2s::read_dataset(cfg.data.test_path);
  std::vector<std::uint64_t> seeds = opts.seeds;
  if (seeds.empty()) seeds.push_back(cfg.train.seed);

  make_out_dir(opts.out_dir);
  log_info("ablation cases '" + cfg.ablation_cases + "' over " + std::to_string(seeds.size()) +
           " seed(s)");
  const d2s::AblationReport report = d2s::ablate(cfg.train, train_data, test_data,
                                                 cfg.ablation_cases, seeds,
                                                 /*results_out=*/nullptr, opts.out_dir);

  write_file(opts.out_dir + "/ablation_runs.csv", report.runs_csv());
  write_file(opts.out_dir + "/ablation_summary.csv", report.summary_csv());
  write_file(opts.out_dir + "/ablation_summary.txt", report.summary_text());
  std::cout << report.summary_text();
  return kOk;
}

int cmd_verify(bool mutate_eal_sign) {
  d2s::verify::Options options;
  if (mutate_eal_sign) {
    // Fault injection for exercising the suite itself: flips the sign of the
    // statistic under test, which the energy-distance check must catch.
    options.eal_value = [](std::span<const double> v, std::span<const double> s) {
      return -d2s::eal_loss(v, s).value;
    };
  }
  const auto results = d2s::verify::run_all(options);
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << " — " << r.detail << '\n';
  }
  return d2s::verify::all_passed(results) ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic image-complexity training lab"};
  app.require_subcommand(1);

  CliOptions gen_opts, train_opts, eval_opts, infer_opts, ablate_opts;
  bool mutate_eal_sign = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset + manifest");
  add_common_options(gen, gen_opts, /*with_out=*/true);
  CLI::App* train = app.add_subcommand("train", "train and write a run directory");
  add_common_options(train, train_opts, true);
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common_options(eval, eval_opts, true);
  CLI::App* infer = app.add_subcommand("infer", "score images with a checkpoint");
  add_common_options(infer, infer_opts, true);
  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation-case sweep");
  add_common_options(ablate, ablate_opts, true);
  CLI::App* verify = app.add_subcommand("verify", "run the oracle verification suite");
  verify->add_flag("--mutate-eal-sign", mutate_eal_sign)->group("");  // hidden test hook

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts);
    if (train->parsed()) return cmd_train(train_opts);
    if (eval->parsed()) return cmd_eval(eval_opts);
    if (infer->parsed()) return cmd_infer(infer_opts);
    if (ablate->parsed()) return cmd_ablate(ablate_opts);
    if (verify->parsed()) return cmd_verify(mutate_eal_sign);
  } catch (const d2s::ConfigError& e) {
    std::fprintf(stderr, "[error] config: %s\n", e.what());
    return kConfigError;
  } catch (const d2s::IoError& e) {
    std::fprintf(stderr, "[error] io: %s\n", e.what());
    return kIoError;
  } catch (const d2s::NumericalError& e) {
    std::fprintf(stderr, "[error] numerical: %s\n", e.what());
    return kNumericalError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "[error] config: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "[error] %s\n", e.what());
    return kVerifyFailed;
  }
  return kOk;
}
