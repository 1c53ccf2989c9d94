#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusestyle/rng.hpp"
#include "fusestyle/stats.hpp"
#include "fusestyle/tensor.hpp"

namespace fusestyle {

// Reference-batch construction strategies:
//   RandomShuffle   (M1) - uniform random permutation of the batch
//   LeastDotProduct (RA) - argmin of the raw feature inner product
//   MaxEuclidean    (M2) - argmax of the pairwise Euclidean distance
//   MaxKL           (M3) - argmax of symmetrized diagonal-Gaussian KL
enum class SelectionStrategy { RandomShuffle, LeastDotProduct, MaxEuclidean, MaxKL };

std::string to_string(SelectionStrategy s);
// Accepts m1/ra/m2/m3 or the full names (case-insensitive).
SelectionStrategy parse_strategy(const std::string& name);

// Row-major [rows, cols] matrix of flattened per-instance features.
struct FeatureMatrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols + j)]; }
  const double* row(int64_t i) const { return data.data() + i * cols; }
};

// Raw pairwise inner products rho[i,j] = <z_i, z_j>; symmetric, and the
// diagonal holds squared norms.
struct CorrelationMatrix {
  int64_t size = 0;
  std::vector<double> rho;

  double at(int64_t i, int64_t j) const { return rho[static_cast<size_t>(i * size + j)]; }
};

// Row i is the row-major flattening of instance i of a [B,C,H,W] tensor.
FeatureMatrix flatten_features(const Tensor& z);

CorrelationMatrix correlation_matrix(const FeatureMatrix& z_hat);

// ref[i] = argmin over j != i of rho[i,j]; lowest index wins ties.
std::vector<int64_t> select_least_dot(const CorrelationMatrix& rho);

// Uniform random permutation of 0..B-1 (fixed points permitted).
std::vector<int64_t> select_random_perm(int64_t b, SeededRng& rng);

// ref[i] = argmax over j != i of ||z_i - z_j||_2; lowest index wins ties.
std::vector<int64_t> select_max_euclidean(const FeatureMatrix& z_hat);

// Symmetrized KL divergence between diagonal Gaussians built from
// per-channel instance statistics:
//   D = sum_c [ KL(N(mu_i,c, s_i,c^2) || N(mu_j,c, s_j,c^2)) + KL(swap) ]
//   KL(N1||N2) = log(s2/s1) + (s1^2 + (mu1-mu2)^2) / (2 s2^2) - 1/2.
double kl_diag_gaussian(const std::vector<double>& mu_i, const std::vector<double>& sigma_i,
                        const std::vector<double>& mu_j, const std::vector<double>& sigma_j);

// ref[i] = argmax over j != i of kl_diag_gaussian(i, j); lowest index wins.
std::vector<int64_t> select_max_kl(const InstanceStats& stats);

}  // namespace fusestyle
