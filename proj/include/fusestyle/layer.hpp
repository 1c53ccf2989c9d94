#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fusestyle/rng.hpp"
#include "fusestyle/selection.hpp"
#include "fusestyle/tensor.hpp"

namespace fusestyle {

enum class LayerMode { Train, Eval };

struct FuseStyleConfig {
  double alpha = 0.3;       // Beta(alpha, alpha) shape
  double p_apply = 0.5;     // per-batch gate probability
  double epsilon = 1e-6;    // variance stabilizer
  SelectionStrategy strategy = SelectionStrategy::LeastDotProduct;
  LayerMode mode = LayerMode::Train;
  // Ablation switch: when set, no gradient flows through the reference
  // batch statistics (the content path still carries gradients).
  bool detach_reference_stats = false;

  void validate() const;
};

// One batch's sampled mixing plan. When applied is false the forward pass
// ignores lambdas and ref_indices.
struct MixDecision {
  bool applied = false;
  std::vector<double> lambdas;       // per instance, in [0,1]
  std::vector<int64_t> ref_indices;  // per instance, in [0,B)
};

// Independent Beta(alpha, alpha) draws, one per instance.
std::vector<double> sample_lambdas(double alpha, int64_t batch, SeededRng& rng);

// Samples the gate, reference indices and lambdas for one batch. Consumes
// rng in that fixed order (the gate draw always happens in Train mode).
// Non-differentiable: operates on the feature values only.
MixDecision plan_mix(const Tensor& x, const FuseStyleConfig& config, SeededRng& rng);

// Replays a decision as the differentiable statistics-mixing map. With
// applied=false this returns x unchanged (bit-exact, same storage).
Tensor apply_mix(const Tensor& x, const FuseStyleConfig& config, const MixDecision& decision);

// plan_mix + apply_mix. In Eval mode returns x unchanged and consumes no
// randomness.
std::pair<Tensor, MixDecision> fusestyle_forward(const Tensor& x, const FuseStyleConfig& config, SeededRng& rng);

// One audit-log line: batch index, applied flag, lambdas to 6 decimals,
// reference indices.
std::string format_decision(int64_t batch_index, const MixDecision& decision);

}  // namespace fusestyle
