#include "fusestyle/train.hpp"

#include <chrono>
#include <cmath>

#include <fmt/format.h>

#include "fusestyle/error.hpp"
#include "fusestyle/ops.hpp"
#include "fusestyle/rng.hpp"

namespace fusestyle {

AdamState AdamState::init(const std::vector<Tensor*>& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const Tensor* p : params) {
    s.m.emplace_back(static_cast<size_t>(p->size()), 0.0);
    s.v.emplace_back(static_cast<size_t>(p->size()), 0.0);
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, AdamState& state) {
  if (params.size() != state.m.size()) {
    throw ContractError(fmt::format("adam_step: state tracks {} tensors, got {}", state.m.size(), params.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    if (!p.has_grad()) throw ContractError("adam_step: parameter gradient not populated");
    auto& values = p.values();
    const auto& g = p.grad();
    auto& m = state.m[t];
    auto& v = state.v[t];
    if (m.size() != values.size()) {
      throw ContractError(fmt::format("adam_step: state shape {} != parameter shape {}", m.size(), values.size()));
    }
    for (size_t i = 0; i < values.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      values[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double scheduler_step(PlateauScheduler& sched, double epoch_loss) {
  if (!sched.has_best || epoch_loss < sched.best - sched.threshold) {
    sched.best = epoch_loss;
    sched.has_best = true;
    sched.epochs_since_improvement = 0;
  } else {
    sched.epochs_since_improvement += 1;
    if (sched.epochs_since_improvement > sched.patience) {
      sched.lr *= sched.factor;
      sched.epochs_since_improvement = 0;
    }
  }
  return sched.lr;
}

TrainResult train(Model& model, const std::vector<LoadedSample>& train_set, const TrainOptions& options,
                  const DecisionSink& decisions) {
  if (train_set.empty()) throw ValidationError("train: empty training set");
  auto params = model.parameters();
  AdamState adam = AdamState::init(params, options.lr);
  PlateauScheduler sched;
  sched.lr = options.lr;
  sched.factor = options.factor;
  sched.patience = options.patience;

  SeededRng augment_rng(options.augment_seed);
  TrainResult result;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    BatchStream stream = load_batches(train_set, options.batch_size, derive_seed(options.shuffle_seed, static_cast<uint64_t>(epoch)));
    double loss_sum = 0.0;
    int64_t batch_index = 0;
    int64_t sample_count = 0;
    while (auto batch = stream.next()) {
      const int64_t b = batch->images.shape()[0];
      std::vector<double> targets(static_cast<size_t>(b));
      for (int64_t i = 0; i < b; ++i) targets[static_cast<size_t>(i)] = batch->labels[static_cast<size_t>(i)];
      Tensor target_tensor(Shape{b, 1}, std::move(targets));

      GradientTape tape;
      double loss_value = 0.0;
      try {
        TapeScope scope(tape);
        ForwardResult fwd = forward(model, batch->images, LayerMode::Train, augment_rng);
        Tensor loss = sigmoid_bce_loss(fwd.logits, target_tensor);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw NumericError("non-finite loss");
        }
        tape.backward(loss);
        if (decisions) {
          for (size_t layer = 0; layer < fwd.decisions.size(); ++layer) {
            decisions(fmt::format("epoch={} layer={} {}", epoch, layer, format_decision(batch_index, fwd.decisions[layer])));
          }
        }
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("training aborted at epoch {} batch {}: {}", epoch, batch_index, e.what()));
      }
      adam_step(params, adam);
      model.zero_grad();
      loss_sum += loss_value * static_cast<double>(b);
      sample_count += b;
      batch_index += 1;
    }
    const double epoch_loss = loss_sum / static_cast<double>(sample_count);
    adam.lr = scheduler_step(sched, epoch_loss);
    const auto epoch_end = std::chrono::steady_clock::now();
    result.loss_curve.push_back(epoch_loss);
    result.lr_curve.push_back(adam.lr);
    result.epoch_seconds.push_back(std::chrono::duration<double>(epoch_end - epoch_start).count());
  }
  return result;
}

EvalResult evaluate(Model& model, const std::vector<LoadedSample>& test_set, int64_t batch_size) {
  if (test_set.empty()) throw ValidationError("evaluate: empty test set");
  EvalResult result;
  std::map<std::string, int64_t> correct, total;
  SeededRng unused(0);

  // Fixed order (shuffle seed irrelevant for accuracy; keep rows stable).
  std::vector<const LoadedSample*> ptrs;
  for (const auto& s : test_set) ptrs.push_back(&s);
  for (size_t start = 0; start < ptrs.size(); start += static_cast<size_t>(batch_size)) {
    const auto b = static_cast<int64_t>(std::min(static_cast<size_t>(batch_size), ptrs.size() - start));
    std::vector<double> values(static_cast<size_t>(b * kImageBytes));
    for (int64_t i = 0; i < b; ++i) {
      const LoadedSample* s = ptrs[start + static_cast<size_t>(i)];
      std::copy(s->pixels.begin(), s->pixels.end(), values.begin() + i * kImageBytes);
    }
    Tensor images(Shape{b, kImageChannels, kImageSize, kImageSize}, std::move(values));
    ForwardResult fwd = forward(model, images, LayerMode::Eval, unused);
    for (int64_t i = 0; i < b; ++i) {
      const LoadedSample* s = ptrs[start + static_cast<size_t>(i)];
      const double logit = fwd.logits.values()[static_cast<size_t>(i)];
      const int pred = logit >= 0.0 ? 1 : 0;
      total[s->domain_id] += 1;
      if (pred == s->label) correct[s->domain_id] += 1;
      result.prediction_rows.push_back(
          fmt::format("{},{},{},{:.9g},{}", s->sample_id, s->domain_id, s->label, logit, pred));
    }
  }
  for (const auto& [domain, n] : total) {
    result.accuracy_per_domain[domain] = 100.0 * static_cast<double>(correct[domain]) / static_cast<double>(n);
  }
  return result;
}

}  // namespace fusestyle
