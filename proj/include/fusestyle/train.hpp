#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fusestyle/model.hpp"
#include "fusestyle/synth.hpp"
#include "fusestyle/tensor.hpp"

namespace fusestyle {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<double>> m;  // first moments, one entry per parameter tensor
  std::vector<std::vector<double>> v;  // second moments

  static AdamState init(const std::vector<Tensor*>& params, double lr);
};

// Bias-corrected Adam update in place; reads each parameter's grad.
void adam_step(const std::vector<Tensor*>& params, AdamState& state);

// Reduce-on-plateau on the training loss: after `patience` consecutive
// epochs without improvement (loss < best - threshold), multiply lr by
// `factor` on the next non-improving epoch. lr never increases.
struct PlateauScheduler {
  double lr = 1e-4;
  double factor = 0.01;
  int patience = 2;
  double threshold = 1e-6;
  double best = 0.0;
  bool has_best = false;
  int epochs_since_improvement = 0;
};

double scheduler_step(PlateauScheduler& sched, double epoch_loss);

struct TrainOptions {
  int epochs = 15;
  int64_t batch_size = 32;
  double lr = 1e-4;
  int patience = 2;
  double factor = 0.01;
  uint64_t shuffle_seed = 0;
  uint64_t augment_seed = 0;
};

struct TrainResult {
  std::vector<double> loss_curve;     // mean training loss per epoch
  std::vector<double> epoch_seconds;  // wall clock per epoch, selection cost included
  std::vector<double> lr_curve;       // lr in effect after each epoch's scheduler step
};

// Sink for the per-batch mixing-decision audit log.
using DecisionSink = std::function<void(const std::string& line)>;

TrainResult train(Model& model, const std::vector<LoadedSample>& train_set, const TrainOptions& options,
                  const DecisionSink& decisions = nullptr);

struct EvalResult {
  std::map<std::string, double> accuracy_per_domain;  // percent
  // One row per sample: sample_id, domain, label, logit, pred.
  std::vector<std::string> prediction_rows;
};

EvalResult evaluate(Model& model, const std::vector<LoadedSample>& test_set, int64_t batch_size = 256);

}  // namespace fusestyle
