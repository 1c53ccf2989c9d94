#include "fusestyle/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "fusestyle/error.hpp"
#include "fusestyle/rng.hpp"

namespace fusestyle {

namespace fs = std::filesystem;

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["data_dir"] = data_dir;
  j["holdout"] = holdout;
  j["use_fusestyle"] = use_fusestyle;
  j["strategy"] = to_string(strategy);
  j["alpha"] = alpha;
  j["p_apply"] = p_apply;
  j["epsilon"] = epsilon;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["patience"] = patience;
  j["factor"] = factor;
  j["seed"] = seed;
  j["block_channels"] = block_channels;
  j["mix_points"] = std::vector<int64_t>(mix_points.begin(), mix_points.end());
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.data_dir = j.at("data_dir").get<std::string>();
  c.holdout = j.at("holdout").get<std::string>();
  c.use_fusestyle = j.at("use_fusestyle").get<bool>();
  c.strategy = parse_strategy(j.at("strategy").get<std::string>());
  c.alpha = j.at("alpha").get<double>();
  c.p_apply = j.at("p_apply").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int64_t>();
  c.lr = j.at("lr").get<double>();
  c.patience = j.at("patience").get<int>();
  c.factor = j.at("factor").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.block_channels = j.at("block_channels").get<std::vector<int64_t>>();
  auto points = j.at("mix_points").get<std::vector<int64_t>>();
  c.mix_points = std::set<int64_t>(points.begin(), points.end());
  return c;
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["config"] = config_snapshot;
  j["strategy"] = strategy_name;
  j["unseen"] = unseen;
  j["seen"] = seen;
  j["accuracy"] = accuracy;
  j["loss_curve"] = loss_curve;
  j["lr_curve"] = lr_curve;
  j["epoch_seconds"] = epoch_seconds;
  j["seed"] = seed;
  return j;
}

ExperimentReport ExperimentReport::from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.config_snapshot = j.at("config");
  r.strategy_name = j.at("strategy").get<std::string>();
  r.unseen = j.at("unseen").get<std::string>();
  r.seen = j.at("seen").get<std::vector<std::string>>();
  r.accuracy = j.at("accuracy").get<std::map<std::string, double>>();
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  r.lr_curve = j.at("lr_curve").get<std::vector<double>>();
  r.epoch_seconds = j.at("epoch_seconds").get<std::vector<double>>();
  r.seed = j.at("seed").get<uint64_t>();
  return r;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError(fmt::format("cannot write {}", tmp));
    os << content;
    if (!os) throw IoError(fmt::format("write failed: {}", tmp));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError(fmt::format("cannot rename {} -> {}: {}", tmp, path, ec.message()));
}

ExperimentReport run_experiment(const ExperimentConfig& config, const ExperimentArtifacts* artifacts) {
  DatasetManifest manifest = load_manifest(config.data_dir);
  LeaveOneOutSplit split = leave_one_out_splits(manifest, config.holdout);

  std::vector<LoadedSample> train_set = load_samples(config.data_dir, manifest, split.train);
  std::vector<LoadedSample> test_set = load_samples(config.data_dir, manifest, split.test_per_domain);

  ModelConfig model_config;
  model_config.block_channels = config.block_channels;
  model_config.mix_points = config.use_fusestyle ? config.mix_points : std::set<int64_t>{};
  model_config.fusestyle.alpha = config.alpha;
  model_config.fusestyle.p_apply = config.p_apply;
  model_config.fusestyle.epsilon = config.epsilon;
  model_config.fusestyle.strategy = config.strategy;
  model_config.init_seed = derive_seed(config.seed, 1);
  Model model = build_model(model_config);

  TrainOptions options;
  options.epochs = config.epochs;
  options.batch_size = config.batch_size;
  options.lr = config.lr;
  options.patience = config.patience;
  options.factor = config.factor;
  options.shuffle_seed = derive_seed(config.seed, 2);
  options.augment_seed = derive_seed(config.seed, 3);

  std::string decision_log;
  DecisionSink sink = nullptr;
  if (artifacts && !artifacts->decisions_log.empty()) {
    sink = [&decision_log](const std::string& line) {
      decision_log += line;
      decision_log += '\n';
    };
  }

  TrainResult trained = train(model, train_set, options, sink);
  EvalResult eval = evaluate(model, test_set);

  ExperimentReport report;
  report.config_snapshot = config.to_json();
  report.strategy_name = config.use_fusestyle ? to_string(config.strategy) : "none";
  report.unseen = config.holdout;
  for (const auto& d : manifest.domains) {
    if (d.domain_id != config.holdout) report.seen.push_back(d.domain_id);
  }
  report.accuracy = eval.accuracy_per_domain;
  report.loss_curve = trained.loss_curve;
  report.lr_curve = trained.lr_curve;
  report.epoch_seconds = trained.epoch_seconds;
  report.seed = config.seed;

  if (artifacts) {
    if (!artifacts->report_jsonl.empty()) {
      write_text_atomic(artifacts->report_jsonl, report.to_json().dump() + "\n");
    }
    if (!artifacts->report_text.empty()) {
      write_text_atomic(artifacts->report_text, format_report_text(report));
    }
    if (!artifacts->predictions_csv.empty()) {
      std::string csv = "sample_id,domain,label,logit,pred\n";
      for (const auto& row : eval.prediction_rows) {
        csv += row;
        csv += '\n';
      }
      write_text_atomic(artifacts->predictions_csv, csv);
    }
    if (!artifacts->decisions_log.empty()) {
      write_text_atomic(artifacts->decisions_log, decision_log);
    }
    if (!artifacts->checkpoint.empty()) {
      save_checkpoint(model, artifacts->checkpoint);
    }
  }
  return report;
}

std::string format_report_text(const ExperimentReport& report) {
  std::string out;
  out += fmt::format("strategy={} holdout={} seed={}\n", report.strategy_name, report.unseen, report.seed);
  out += fmt::format("{:<10} {:>12}  {}\n", "domain", "accuracy(%)", "role");
  for (const auto& [domain, acc] : report.accuracy) {
    out += fmt::format("{:<10} {:>12.2f}  {}\n", domain, acc, domain == report.unseen ? "unseen" : "seen");
  }
  double mean_epoch = 0.0;
  for (double s : report.epoch_seconds) mean_epoch += s;
  if (!report.epoch_seconds.empty()) mean_epoch /= static_cast<double>(report.epoch_seconds.size());
  out += fmt::format("epochs={} mean_epoch_seconds={:.3f} final_loss={:.6f}\n", report.loss_curve.size(),
                     mean_epoch, report.loss_curve.empty() ? 0.0 : report.loss_curve.back());
  return out;
}

std::vector<ExperimentReport> read_report_files(const std::vector<std::string>& paths) {
  std::vector<ExperimentReport> reports;
  for (const auto& path : paths) {
    std::ifstream is(path);
    if (!is) throw IoError(fmt::format("cannot open report {}", path));
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      try {
        reports.push_back(ExperimentReport::from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(fmt::format("bad report line in {}: {}", path, e.what()));
      }
    }
  }
  return reports;
}

std::vector<ReportGroup> group_reports(const std::vector<ExperimentReport>& reports) {
  std::vector<ReportGroup> groups;
  for (const auto& report : reports) {
    ReportGroup* group = nullptr;
    for (auto& g : groups) {
      if (g.strategy == report.strategy_name && g.holdout == report.unseen) {
        group = &g;
        break;
      }
    }
    if (!group) {
      groups.push_back({report.strategy_name, report.unseen, {}});
      group = &groups.back();
    }
    if (!group->runs.empty()) {
      nlohmann::json a = group->runs.front().config_snapshot;
      nlohmann::json b = report.config_snapshot;
      a.erase("seed");
      b.erase("seed");
      if (a != b) {
        throw ValidationError(fmt::format("conflicting config snapshots in group ({}, {})", group->strategy,
                                          group->holdout));
      }
    }
    group->runs.push_back(report);
  }
  return groups;
}

namespace {

std::vector<std::string> collect_domains(const std::vector<ReportGroup>& groups) {
  std::vector<std::string> domains;
  for (const auto& g : groups) {
    for (const auto& r : g.runs) {
      for (const auto& [d, acc] : r.accuracy) {
        if (std::find(domains.begin(), domains.end(), d) == domains.end()) domains.push_back(d);
      }
    }
  }
  std::sort(domains.begin(), domains.end());
  return domains;
}

struct Aggregate {
  double mean = 0.0;
  double half_range = 0.0;
  bool present = false;
};

Aggregate aggregate_domain(const ReportGroup& g, const std::string& domain) {
  Aggregate a;
  double lo = 0.0, hi = 0.0;
  int n = 0;
  for (const auto& r : g.runs) {
    auto it = r.accuracy.find(domain);
    if (it == r.accuracy.end()) continue;
    const double v = it->second;
    if (n == 0) {
      lo = hi = v;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    a.mean += v;
    n += 1;
  }
  if (n > 0) {
    a.mean /= n;
    a.half_range = (hi - lo) / 2.0;
    a.present = true;
  }
  return a;
}

}  // namespace

std::string format_group_table(const std::vector<ReportGroup>& groups) {
  const auto domains = collect_domains(groups);
  std::string out = fmt::format("{:<16} {:<9} {:>5}", "strategy", "holdout", "seeds");
  for (const auto& d : domains) out += fmt::format(" {:>16}", d);
  out += "\n";
  for (const auto& g : groups) {
    out += fmt::format("{:<16} {:<9} {:>5}", g.strategy, g.holdout, g.runs.size());
    for (const auto& d : domains) {
      const Aggregate a = aggregate_domain(g, d);
      if (!a.present) {
        out += fmt::format(" {:>16}", "-");
      } else {
        std::string cell = fmt::format("{:.2f} ± {:.2f}{}", a.mean, a.half_range, d == g.holdout ? "*" : " ");
        out += fmt::format(" {:>17}", cell);  // +1 for the 2-byte UTF-8 sign
      }
    }
    out += "\n";
  }
  out += "(* = unseen domain)\n";
  return out;
}

std::string format_group_csv(const std::vector<ReportGroup>& groups) {
  const auto domains = collect_domains(groups);
  std::string out = "strategy,holdout,seeds";
  for (const auto& d : domains) out += fmt::format(",{}_mean,{}_half_range,{}_unseen", d, d, d);
  out += "\n";
  for (const auto& g : groups) {
    out += fmt::format("{},{},{}", g.strategy, g.holdout, g.runs.size());
    for (const auto& d : domains) {
      const Aggregate a = aggregate_domain(g, d);
      if (!a.present) {
        out += ",,,";
      } else {
        out += fmt::format(",{:.6g},{:.6g},{}", a.mean, a.half_range, d == g.holdout ? 1 : 0);
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace fusestyle
