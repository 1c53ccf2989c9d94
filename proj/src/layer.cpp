#include "fusestyle/layer.hpp"

#include <iostream>

#include <fmt/format.h>

#include "fusestyle/error.hpp"
#include "fusestyle/ops.hpp"
#include "fusestyle/stats.hpp"

namespace fusestyle {

void FuseStyleConfig::validate() const {
  if (!(alpha > 0.0)) throw ValidationError(fmt::format("fusestyle: alpha must be positive, got {}", alpha));
  if (!(p_apply >= 0.0 && p_apply <= 1.0)) {
    throw ValidationError(fmt::format("fusestyle: p_apply must be in [0,1], got {}", p_apply));
  }
  if (!(epsilon > 0.0)) throw ValidationError(fmt::format("fusestyle: epsilon must be positive, got {}", epsilon));
}

std::vector<double> sample_lambdas(double alpha, int64_t batch, SeededRng& rng) {
  if (!(alpha > 0.0)) throw ValidationError(fmt::format("sample_lambdas: alpha must be positive, got {}", alpha));
  if (batch < 1) throw ValidationError("sample_lambdas: batch must be >= 1");
  std::vector<double> out(static_cast<size_t>(batch));
  for (auto& l : out) l = rng.beta(alpha, alpha);
  return out;
}

MixDecision plan_mix(const Tensor& x, const FuseStyleConfig& config, SeededRng& rng) {
  config.validate();
  if (x.shape().rank() != 4) {
    throw DimensionError(fmt::format("fusestyle: expected [B,C,H,W] features, got {}", x.shape().to_string()));
  }
  MixDecision decision;
  if (config.mode == LayerMode::Eval) return decision;

  const int64_t b = x.shape()[0];
  const bool gate = rng.bernoulli(config.p_apply);
  if (!gate) return decision;

  const bool pairwise = config.strategy != SelectionStrategy::RandomShuffle;
  if (b < 2 && pairwise) {
    std::cerr << "[fusestyle] warning: batch of 1 cannot mix under " << to_string(config.strategy)
              << "; passing through\n";
    return decision;
  }

  switch (config.strategy) {
    case SelectionStrategy::RandomShuffle:
      decision.ref_indices = select_random_perm(b, rng);
      break;
    case SelectionStrategy::LeastDotProduct:
      decision.ref_indices = select_least_dot(correlation_matrix(flatten_features(x)));
      break;
    case SelectionStrategy::MaxEuclidean:
      decision.ref_indices = select_max_euclidean(flatten_features(x));
      break;
    case SelectionStrategy::MaxKL: {
      // Planning works on values only; stats here never join the graph.
      GradientTape* saved = detail::exchange_active_tape(nullptr);
      InstanceStats stats = instance_stats(x, config.epsilon);
      detail::exchange_active_tape(saved);
      decision.ref_indices = select_max_kl(stats);
      break;
    }
  }
  decision.lambdas = sample_lambdas(config.alpha, b, rng);
  decision.applied = true;
  return decision;
}

Tensor apply_mix(const Tensor& x, const FuseStyleConfig& config, const MixDecision& decision) {
  if (!decision.applied) return x;
  const int64_t b = x.shape()[0];
  if (static_cast<int64_t>(decision.lambdas.size()) != b ||
      static_cast<int64_t>(decision.ref_indices.size()) != b) {
    throw DimensionError(fmt::format("fusestyle: decision sized for batch {}, features have batch {}",
                                     decision.lambdas.size(), b));
  }

  InstanceStats stats = instance_stats(x, config.epsilon);
  InstanceStats ref;
  if (config.detach_reference_stats) {
    Tensor mu_const(stats.mu.shape(), stats.mu.values(), false);
    Tensor sigma_const(stats.sigma.shape(), stats.sigma.values(), false);
    ref = InstanceStats{gather_rows(mu_const, decision.ref_indices),
                        gather_rows(sigma_const, decision.ref_indices)};
  } else {
    ref = InstanceStats{gather_rows(stats.mu, decision.ref_indices),
                        gather_rows(stats.sigma, decision.ref_indices)};
  }
  MixedStats mixed = mix_statistics(stats, ref, decision.lambdas);
  return apply_style(x, stats, mixed);
}

std::pair<Tensor, MixDecision> fusestyle_forward(const Tensor& x, const FuseStyleConfig& config, SeededRng& rng) {
  MixDecision decision = plan_mix(x, config, rng);
  return {apply_mix(x, config, decision), decision};
}

std::string format_decision(int64_t batch_index, const MixDecision& decision) {
  std::string line = fmt::format("batch={} applied={}", batch_index, decision.applied ? 1 : 0);
  if (decision.applied) {
    line += " lambdas=";
    for (size_t i = 0; i < decision.lambdas.size(); ++i) {
      line += fmt::format("{}{:.6f}", i ? "," : "", decision.lambdas[i]);
    }
    line += " refs=";
    for (size_t i = 0; i < decision.ref_indices.size(); ++i) {
      line += fmt::format("{}{}", i ? "," : "", decision.ref_indices[i]);
    }
  }
  return line;
}

}  // namespace fusestyle
