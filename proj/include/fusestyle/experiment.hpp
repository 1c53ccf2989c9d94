#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fusestyle/selection.hpp"
#include "fusestyle/train.hpp"

namespace fusestyle {

// One leave-one-domain-out training/evaluation cell.
struct ExperimentConfig {
  std::string data_dir;
  std::string holdout;
  bool use_fusestyle = true;
  SelectionStrategy strategy = SelectionStrategy::LeastDotProduct;
  double alpha = 0.3;
  double p_apply = 0.5;
  double epsilon = 1e-6;
  int epochs = 15;
  int64_t batch_size = 32;
  double lr = 1e-4;
  int patience = 2;
  double factor = 0.01;
  uint64_t seed = 0;
  std::vector<int64_t> block_channels = {16, 32, 64, 64};
  std::set<int64_t> mix_points = {1, 4};

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct ExperimentReport {
  nlohmann::json config_snapshot;
  std::string strategy_name;  // "none" when FuseStyle is disabled
  std::string unseen;
  std::vector<std::string> seen;
  std::map<std::string, double> accuracy;  // percent per domain
  std::vector<double> loss_curve;
  std::vector<double> lr_curve;
  std::vector<double> epoch_seconds;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);
};

// Optional file outputs; empty string skips that artifact. Files are
// written atomically (temp file + rename).
struct ExperimentArtifacts {
  std::string report_jsonl;
  std::string report_text;
  std::string predictions_csv;
  std::string decisions_log;
  std::string checkpoint;
};

ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentArtifacts* artifacts = nullptr);

// Human-readable single-run table.
std::string format_report_text(const ExperimentReport& report);

std::vector<ExperimentReport> read_report_files(const std::vector<std::string>& paths);

// Reports grouped by (strategy, holdout); within a group every config
// snapshot must match except for the seed.
struct ReportGroup {
  std::string strategy;
  std::string holdout;
  std::vector<ExperimentReport> runs;
};

std::vector<ReportGroup> group_reports(const std::vector<ExperimentReport>& reports);

// Aggregated comparison table: mean accuracy per domain across seeds, with
// half-range spread and the unseen column marked.
std::string format_group_table(const std::vector<ReportGroup>& groups);
std::string format_group_csv(const std::vector<ReportGroup>& groups);

void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace fusestyle
