#include "fusestyle/selection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "fusestyle/error.hpp"

namespace fusestyle {

std::string to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::RandomShuffle: return "RandomShuffle";
    case SelectionStrategy::LeastDotProduct: return "LeastDotProduct";
    case SelectionStrategy::MaxEuclidean: return "MaxEuclidean";
    case SelectionStrategy::MaxKL: return "MaxKL";
  }
  return "?";
}

SelectionStrategy parse_strategy(const std::string& name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "m1" || s == "randomshuffle") return SelectionStrategy::RandomShuffle;
  if (s == "ra" || s == "leastdotproduct") return SelectionStrategy::LeastDotProduct;
  if (s == "m2" || s == "maxeuclidean") return SelectionStrategy::MaxEuclidean;
  if (s == "m3" || s == "maxkl") return SelectionStrategy::MaxKL;
  throw ValidationError(fmt::format("unknown selection strategy '{}'", name));
}

FeatureMatrix flatten_features(const Tensor& z) {
  if (z.shape().rank() < 1) throw DimensionError("flatten_features: rank must be >= 1");
  FeatureMatrix out;
  out.rows = z.shape()[0];
  out.cols = z.shape().numel() / out.rows;
  out.data = z.values();
  return out;
}

CorrelationMatrix correlation_matrix(const FeatureMatrix& z_hat) {
  const int64_t b = z_hat.rows, n = z_hat.cols;
  CorrelationMatrix out;
  out.size = b;
  out.rho.assign(static_cast<size_t>(b * b), 0.0);
  for (int64_t i = 0; i < b; ++i) {
    const double* zi = z_hat.row(i);
    for (int64_t j = i; j < b; ++j) {
      const double* zj = z_hat.row(j);
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      int64_t k = 0;
      for (; k + 4 <= n; k += 4) {
        s0 += zi[k] * zj[k];
        s1 += zi[k + 1] * zj[k + 1];
        s2 += zi[k + 2] * zj[k + 2];
        s3 += zi[k + 3] * zj[k + 3];
      }
      for (; k < n; ++k) s0 += zi[k] * zj[k];
      const double dot = (s0 + s1) + (s2 + s3);
      out.rho[static_cast<size_t>(i * b + j)] = dot;
      out.rho[static_cast<size_t>(j * b + i)] = dot;
    }
  }
  return out;
}

std::vector<int64_t> select_least_dot(const CorrelationMatrix& rho) {
  const int64_t b = rho.size;
  if (b < 2) throw ContractError("select_least_dot: batch size must be >= 2");
  std::vector<int64_t> ref(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    int64_t best = -1;
    double best_v = 0.0;
    for (int64_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double v = rho.at(i, j);
      if (best < 0 || v < best_v) {
        best = j;
        best_v = v;
      }
    }
    ref[static_cast<size_t>(i)] = best;
  }
  return ref;
}

std::vector<int64_t> select_random_perm(int64_t b, SeededRng& rng) {
  if (b < 1) throw ContractError("select_random_perm: batch size must be >= 1");
  return rng.permutation(b);
}

std::vector<int64_t> select_max_euclidean(const FeatureMatrix& z_hat) {
  const int64_t b = z_hat.rows, n = z_hat.cols;
  if (b < 2) throw ContractError("select_max_euclidean: batch size must be >= 2");
  std::vector<int64_t> ref(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    const double* zi = z_hat.row(i);
    int64_t best = -1;
    double best_v = 0.0;
    for (int64_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double* zj = z_hat.row(j);
      double d2 = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        const double d = zi[k] - zj[k];
        d2 += d * d;
      }
      if (best < 0 || d2 > best_v) {
        best = j;
        best_v = d2;
      }
    }
    ref[static_cast<size_t>(i)] = best;
  }
  return ref;
}

double kl_diag_gaussian(const std::vector<double>& mu_i, const std::vector<double>& sigma_i,
                        const std::vector<double>& mu_j, const std::vector<double>& sigma_j) {
  if (mu_i.size() != sigma_i.size() || mu_j.size() != sigma_j.size() || mu_i.size() != mu_j.size()) {
    throw DimensionError("kl_diag_gaussian: statistic vectors must have matching length");
  }
  double total = 0.0;
  for (size_t c = 0; c < mu_i.size(); ++c) {
    const double s1 = sigma_i[c], s2 = sigma_j[c];
    if (!(s1 > 0.0) || !(s2 > 0.0)) {
      throw ValidationError(fmt::format("kl_diag_gaussian: non-positive sigma ({}, {})", s1, s2));
    }
    const double d = mu_i[c] - mu_j[c];
    const double forward = std::log(s2 / s1) + (s1 * s1 + d * d) / (2.0 * s2 * s2) - 0.5;
    const double reverse = std::log(s1 / s2) + (s2 * s2 + d * d) / (2.0 * s1 * s1) - 0.5;
    total += forward + reverse;
  }
  return total;
}

std::vector<int64_t> select_max_kl(const InstanceStats& stats) {
  const int64_t b = stats.mu.shape()[0];
  const int64_t c = stats.mu.shape()[1];
  if (b < 2) throw ContractError("select_max_kl: batch size must be >= 2");
  const auto& mu = stats.mu.values();
  const auto& sg = stats.sigma.values();
  auto channel_slice = [c](const std::vector<double>& v, int64_t i) {
    return std::vector<double>(v.begin() + i * c, v.begin() + (i + 1) * c);
  };
  std::vector<int64_t> ref(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    const auto mu_i = channel_slice(mu, i);
    const auto sg_i = channel_slice(sg, i);
    int64_t best = -1;
    double best_v = 0.0;
    for (int64_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double v = kl_diag_gaussian(mu_i, sg_i, channel_slice(mu, j), channel_slice(sg, j));
      if (best < 0 || v > best_v) {
        best = j;
        best_v = v;
      }
    }
    ref[static_cast<size_t>(i)] = best;
  }
  return ref;
}

}  // namespace fusestyle
