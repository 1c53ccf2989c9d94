#pragma once

#include <vector>

#include "fusestyle/tensor.hpp"

namespace fusestyle {

// Per-instance, per-channel feature statistics: mu and sigma are [B,C]
// tensors computed over the spatial extent of each instance. They carry
// gradients when the source features do.
struct InstanceStats {
  Tensor mu;
  Tensor sigma;
};

// Convex-mixed statistics: gamma is the mixed standard deviation, beta the
// mixed mean, both [B,C].
struct MixedStats {
  Tensor gamma;
  Tensor beta;
};

// mu[i,c] = spatial mean; sigma[i,c] = sqrt(biased variance + epsilon).
InstanceStats instance_stats(const Tensor& x, double epsilon);

// gamma_i = lam_i*sigma(x_i) + (1-lam_i)*sigma(y_i),
// beta_i  = lam_i*mu(x_i)    + (1-lam_i)*mu(y_i).
MixedStats mix_statistics(const InstanceStats& stats_x, const InstanceStats& stats_y,
                          const std::vector<double>& lambdas);

// Re-normalizes content features to the mixed style:
// out_i = gamma_i * (x_i - mu(x_i)) / sigma(x_i) + beta_i.
Tensor apply_style(const Tensor& x, const InstanceStats& stats_x, const MixedStats& mixed);

}  // namespace fusestyle
