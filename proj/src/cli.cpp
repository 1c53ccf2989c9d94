#include "fusestyle/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "fusestyle/bench.hpp"
#include "fusestyle/error.hpp"
#include "fusestyle/experiment.hpp"
#include "fusestyle/synth.hpp"

namespace fusestyle {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::string default_data_dir() {
  const char* env = std::getenv("FUSESTYLE_DATA_DIR");
  return env ? env : "data";
}

struct GenDataArgs {
  int64_t domains = 3;
  int64_t n = 200;
  uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& args) {
  const auto specs = default_domains(args.domains);
  DatasetManifest manifest = generate_dataset(specs, args.n, args.seed, args.out);
  for (const auto& [name, checksum] : manifest.checksums) {
    std::cout << fmt::format("{}  {}\n", checksum, name);
  }
  std::cout << fmt::format("{}  manifest.txt\n", manifest_checksum(args.out));
  return kExitOk;
}

struct TrainArgs {
  ExperimentConfig config;
  std::string strategy_flag = "ra";
  bool no_fusestyle = false;
  std::string out_dir = "reports";
  std::string config_file;
};

// Flags win over the config file; the file fills in everything the command
// line left at its default.
void merge_config_file(const CLI::App* cmd, TrainArgs& args) {
  std::ifstream is(args.config_file);
  if (!is) throw IoError(fmt::format("cannot open config file {}", args.config_file));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("bad config file {}: {}", args.config_file, e.what()));
  }
  ExperimentConfig file_config = ExperimentConfig::from_json(j);
  auto keep_flag = [&](const std::string& flag) { return cmd->count(flag) > 0; };
  ExperimentConfig& c = args.config;
  if (!keep_flag("--data")) c.data_dir = file_config.data_dir;
  if (!keep_flag("--holdout")) c.holdout = file_config.holdout;
  if (!keep_flag("--strategy")) c.strategy = file_config.strategy;
  if (!keep_flag("--no-fusestyle")) c.use_fusestyle = file_config.use_fusestyle;
  if (!keep_flag("--alpha")) c.alpha = file_config.alpha;
  if (!keep_flag("--p-apply")) c.p_apply = file_config.p_apply;
  if (!keep_flag("--epsilon")) c.epsilon = file_config.epsilon;
  if (!keep_flag("--epochs")) c.epochs = file_config.epochs;
  if (!keep_flag("--batch")) c.batch_size = file_config.batch_size;
  if (!keep_flag("--lr")) c.lr = file_config.lr;
  if (!keep_flag("--patience")) c.patience = file_config.patience;
  if (!keep_flag("--factor")) c.factor = file_config.factor;
  if (!keep_flag("--seed")) c.seed = file_config.seed;
}

int cmd_train(const CLI::App* cmd, TrainArgs& args) {
  args.config.strategy = parse_strategy(args.strategy_flag);
  args.config.use_fusestyle = !args.no_fusestyle;
  if (!args.config_file.empty()) merge_config_file(cmd, args);
  if (args.config.holdout.empty()) throw ValidationError("train: --holdout is required");

  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", args.out_dir, ec.message()));

  const std::string tag = fmt::format("{}_{}_seed{}", args.config.use_fusestyle ? to_string(args.config.strategy) : "none",
                                      args.config.holdout, args.config.seed);
  ExperimentArtifacts artifacts;
  artifacts.report_jsonl = (fs::path(args.out_dir) / (tag + ".jsonl")).string();
  artifacts.report_text = (fs::path(args.out_dir) / (tag + ".txt")).string();
  artifacts.predictions_csv = (fs::path(args.out_dir) / (tag + ".predictions.csv")).string();
  artifacts.decisions_log = (fs::path(args.out_dir) / (tag + ".decisions.log")).string();
  artifacts.checkpoint = (fs::path(args.out_dir) / (tag + ".ckpt")).string();

  ExperimentReport report = run_experiment(args.config, &artifacts);
  std::cout << format_report_text(report);
  std::cout << fmt::format("report: {}\n", artifacts.report_jsonl);
  return kExitOk;
}

struct BenchArgs {
  int reps = 20;
  uint64_t seed = 0;
  std::string csv;
};

int cmd_bench_strategies(const BenchArgs& args) {
  const std::vector<int64_t> batches = {8, 32, 128, 256};
  const std::vector<std::array<int64_t, 3>> shapes = {{16, 8, 8}, {64, 8, 8}};
  auto rows = bench_strategies(batches, shapes, args.reps, args.seed);
  std::cout << format_bench_table(rows);
  if (!args.csv.empty()) write_text_atomic(args.csv, format_bench_csv(rows));
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string csv;
};

int cmd_report(const ReportArgs& args) {
  auto reports = read_report_files(args.inputs);
  if (reports.empty()) throw ValidationError("report: no report lines found");
  auto groups = group_reports(reports);
  std::cout << format_group_table(groups);
  if (!args.csv.empty()) write_text_atomic(args.csv, format_group_csv(groups));
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"FuseStyle: feature-statistics style mixing on a synthetic multi-domain benchmark"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  gen_args.out = default_data_dir();
  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic multi-domain dataset");
  gen->add_option("--domains", gen_args.domains, "Number of domains (presets D0..D5)")->capture_default_str();
  gen->add_option("--n", gen_args.n, "Samples per class per domain")->capture_default_str();
  gen->add_option("--seed", gen_args.seed, "Dataset seed")->capture_default_str();
  gen->add_option("--out", gen_args.out, "Output directory")->capture_default_str();

  TrainArgs train_args;
  train_args.config.data_dir = default_data_dir();
  CLI::App* train = app.add_subcommand("train", "Train one leave-one-domain-out cell and write reports");
  train->add_option("--data", train_args.config.data_dir, "Dataset directory")->capture_default_str();
  train->add_option("--holdout", train_args.config.holdout, "Held-out (unseen) domain id");
  train->add_option("--strategy", train_args.strategy_flag, "Reference selection: m1|ra|m2|m3")
      ->capture_default_str();
  train->add_flag("--no-fusestyle", train_args.no_fusestyle, "Disable style mixing entirely");
  train->add_option("--alpha", train_args.config.alpha, "Beta distribution shape")->capture_default_str();
  train->add_option("--p-apply", train_args.config.p_apply, "Per-batch gate probability")->capture_default_str();
  train->add_option("--epsilon", train_args.config.epsilon, "Variance stabilizer")->capture_default_str();
  train->add_option("--epochs", train_args.config.epochs, "Training epochs")->capture_default_str();
  train->add_option("--batch", train_args.config.batch_size, "Batch size")->capture_default_str();
  train->add_option("--lr", train_args.config.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--patience", train_args.config.patience, "Plateau patience, epochs")->capture_default_str();
  train->add_option("--factor", train_args.config.factor, "Plateau lr factor")->capture_default_str();
  train->add_option("--seed", train_args.config.seed, "Master seed (init/shuffle/augment streams)")
      ->capture_default_str();
  train->add_option("--out", train_args.out_dir, "Report output directory")->capture_default_str();
  train->add_option("--config", train_args.config_file, "JSON config file (explicit flags win)");

  BenchArgs bench_args;
  CLI::App* bench = app.add_subcommand("bench-strategies", "Time reference-selection strategies");
  bench->add_option("--reps", bench_args.reps, "Repetitions per cell (median reported)")->capture_default_str();
  bench->add_option("--seed", bench_args.seed, "Feature seed")->capture_default_str();
  bench->add_option("--csv", bench_args.csv, "Optional CSV output path");

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand("report", "Aggregate train reports into a comparison table");
  report->add_option("--inputs", report_args.inputs, "Report .jsonl files")->required()->expected(-1);
  report->add_option("--csv", report_args.csv, "Optional CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (train->parsed()) return cmd_train(train, train_args);
    if (bench->parsed()) return cmd_bench_strategies(bench_args);
    if (report->parsed()) return cmd_report(report_args);
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace fusestyle
