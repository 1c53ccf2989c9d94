#include "fusestyle/stats.hpp"

#include <fmt/format.h>

#include "fusestyle/error.hpp"
#include "fusestyle/ops.hpp"

namespace fusestyle {

InstanceStats instance_stats(const Tensor& x, double epsilon) {
  return InstanceStats{instance_mean(x), instance_sigma(x, epsilon)};
}

MixedStats mix_statistics(const InstanceStats& stats_x, const InstanceStats& stats_y,
                          const std::vector<double>& lambdas) {
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ValidationError(fmt::format("mix_statistics: lambda {} outside [0,1]", l));
  }
  return MixedStats{rowwise_lerp(stats_x.sigma, stats_y.sigma, lambdas),
                    rowwise_lerp(stats_x.mu, stats_y.mu, lambdas)};
}

Tensor apply_style(const Tensor& x, const InstanceStats& stats_x, const MixedStats& mixed) {
  Tensor normalized = channel_div(channel_sub(x, stats_x.mu), stats_x.sigma);
  return channel_add(channel_mul(normalized, mixed.gamma), mixed.beta);
}

}  // namespace fusestyle
