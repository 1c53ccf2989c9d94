#include <doctest.h>

#include <cmath>

#include "fusestyle/error.hpp"
#include "fusestyle/selection.hpp"
#include "test_helpers.hpp"

using namespace fusestyle;
using namespace testutil;

namespace {

// Exhaustive O(B^2) scan oracles, independent of the library selectors.
std::vector<int64_t> oracle_least_dot(const CorrelationMatrix& rho) {
  std::vector<int64_t> ref;
  for (int64_t i = 0; i < rho.size; ++i) {
    int64_t best = i == 0 ? 1 : 0;
    for (int64_t j = 0; j < rho.size; ++j) {
      if (j == i) continue;
      if (rho.at(i, j) < rho.at(i, best)) best = j;
    }
    ref.push_back(best);
  }
  return ref;
}

std::vector<int64_t> oracle_max_euclidean(const FeatureMatrix& z) {
  std::vector<int64_t> ref;
  for (int64_t i = 0; i < z.rows; ++i) {
    int64_t best = -1;
    double best_d = -1.0;
    for (int64_t j = 0; j < z.rows; ++j) {
      if (j == i) continue;
      double d = 0.0;
      for (int64_t k = 0; k < z.cols; ++k) d += (z.at(i, k) - z.at(j, k)) * (z.at(i, k) - z.at(j, k));
      d = std::sqrt(d);
      if (d > best_d) {
        best_d = d;
        best = j;
      }
    }
    ref.push_back(best);
  }
  return ref;
}

// Second, independent derivation of the symmetrized diagonal-Gaussian KL.
double oracle_kl(const std::vector<double>& mu1, const std::vector<double>& s1, const std::vector<double>& mu2,
                 const std::vector<double>& s2) {
  double acc = 0.0;
  for (size_t c = 0; c < mu1.size(); ++c) {
    const double v1 = s1[c] * s1[c], v2 = s2[c] * s2[c];
    const double d2 = (mu1[c] - mu2[c]) * (mu1[c] - mu2[c]);
    const double kl12 = 0.5 * (std::log(v2 / v1) + (v1 + d2) / v2 - 1.0);
    const double kl21 = 0.5 * (std::log(v1 / v2) + (v2 + d2) / v1 - 1.0);
    acc += kl12 + kl21;
  }
  return acc;
}

std::vector<int64_t> oracle_max_kl(const InstanceStats& stats) {
  const int64_t b = stats.mu.shape()[0], c = stats.mu.shape()[1];
  auto row = [&](const Tensor& t, int64_t i) {
    return std::vector<double>(t.values().begin() + i * c, t.values().begin() + (i + 1) * c);
  };
  std::vector<int64_t> ref;
  for (int64_t i = 0; i < b; ++i) {
    int64_t best = -1;
    double best_v = -1.0;
    for (int64_t j = 0; j < b; ++j) {
      if (j == i) continue;
      const double v = oracle_kl(row(stats.mu, i), row(stats.sigma, i), row(stats.mu, j), row(stats.sigma, j));
      if (v > best_v) {
        best_v = v;
        best = j;
      }
    }
    ref.push_back(best);
  }
  return ref;
}

FeatureMatrix matrix_from(std::vector<double> data, int64_t rows, int64_t cols) {
  FeatureMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.data = std::move(data);
  return m;
}

}  // namespace

TEST_CASE("flatten_features: row-major flattening") {
  Tensor z(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  FeatureMatrix m = flatten_features(z);
  CHECK(m.rows == 1);
  CHECK(m.cols == 4);
  CHECK(m.data == std::vector<double>{1.0, 2.0, 3.0, 4.0});

  Tensor zero(Shape{3, 2, 2, 2}, 0.0);
  for (double v : flatten_features(zero).data) CHECK(v == 0.0);
}

TEST_CASE("flatten_features: index arithmetic oracle on 2x2x2x2") {
  SeededRng rng(71);
  Tensor z = random_tensor(Shape{2, 2, 2, 2}, rng);
  FeatureMatrix m = flatten_features(z);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t y = 0; y < 2; ++y)
        for (int64_t x = 0; x < 2; ++x)
          CHECK(m.at(b, (c * 2 + y) * 2 + x) == z.values()[static_cast<size_t>(((b * 2 + c) * 2 + y) * 2 + x)]);
}

TEST_CASE("correlation_matrix: orthonormal rows give the identity") {
  FeatureMatrix m = matrix_from({1.0, 0.0, 0.0, 1.0}, 2, 2);
  CorrelationMatrix rho = correlation_matrix(m);
  CHECK(rho.at(0, 0) == doctest::Approx(1.0));
  CHECK(rho.at(0, 1) == doctest::Approx(0.0));
  CHECK(rho.at(1, 0) == doctest::Approx(0.0));
  CHECK(rho.at(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("correlation_matrix: single row gives squared norm") {
  FeatureMatrix m = matrix_from({3.0, 4.0}, 1, 2);
  CHECK(correlation_matrix(m).at(0, 0) == doctest::Approx(25.0));
}

TEST_CASE("correlation_matrix: random 4x7 matches triple-loop oracle, symmetric, norms on diagonal") {
  SeededRng rng(73);
  FeatureMatrix m = matrix_from({}, 4, 7);
  for (int i = 0; i < 28; ++i) m.data.push_back(rng.uniform01() * 2 - 1);
  CorrelationMatrix rho = correlation_matrix(m);
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (int64_t k = 0; k < 7; ++k) dot += m.at(i, k) * m.at(j, k);
      CHECK(std::fabs(rho.at(i, j) - dot) < 1e-10);
      CHECK(std::fabs(rho.at(i, j) - rho.at(j, i)) < 1e-9);
    }
    double norm2 = 0.0;
    for (int64_t k = 0; k < 7; ++k) norm2 += m.at(i, k) * m.at(i, k);
    CHECK(std::fabs(rho.at(i, i) - norm2) < 1e-9);
  }
}

TEST_CASE("select_least_dot: hand-computed row minima") {
  CorrelationMatrix rho;
  rho.size = 3;
  // off-diagonal rows [2,5 / 2,1 / 5,1]; diagonal excluded by the selector
  rho.rho = {
      99, 2, 5,  //
      2, 99, 1,  //
      5, 1, 99,  //
  };
  CHECK(select_least_dot(rho) == std::vector<int64_t>{1, 2, 1});
}

TEST_CASE("select_least_dot: lowest-index tie break") {
  CorrelationMatrix rho;
  rho.size = 4;
  rho.rho.assign(16, 1.0);
  CHECK(select_least_dot(rho) == std::vector<int64_t>{1, 0, 0, 0});
}

TEST_CASE("select_least_dot: batch below 2 is a contract error") {
  CorrelationMatrix rho;
  rho.size = 1;
  rho.rho = {1.0};
  CHECK_THROWS_AS(select_least_dot(rho), ContractError);
}

TEST_CASE("select_least_dot: random 16x16 matrices match the scan oracle") {
  SeededRng rng(74);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMatrix m = matrix_from({}, 16, 16);
    for (int i = 0; i < 256; ++i) m.data.push_back(rng.uniform01() * 2 - 1);
    CorrelationMatrix rho = correlation_matrix(m);
    CHECK(select_least_dot(rho) == oracle_least_dot(rho));
  }
}

TEST_CASE("select_least_dot: argmin invariant under row-constant shifts and positive scaling") {
  SeededRng rng(75);
  FeatureMatrix m = matrix_from({}, 6, 10);
  for (int i = 0; i < 60; ++i) m.data.push_back(rng.uniform01() * 2 - 1);
  CorrelationMatrix rho = correlation_matrix(m);
  const auto baseline = select_least_dot(rho);

  CorrelationMatrix shifted = rho;
  for (int64_t i = 0; i < 6; ++i)
    for (int64_t j = 0; j < 6; ++j)
      if (i != j) shifted.rho[static_cast<size_t>(i * 6 + j)] += 3.25;
  CHECK(select_least_dot(shifted) == baseline);

  FeatureMatrix scaled = m;
  for (double& v : scaled.data) v *= 7.5;
  CHECK(select_least_dot(correlation_matrix(scaled)) == baseline);
}

TEST_CASE("select_random_perm: B=1, determinism, uniform slots") {
  SeededRng rng(76);
  CHECK(select_random_perm(1, rng) == std::vector<int64_t>{0});

  SeededRng a(5), b(5);
  CHECK(select_random_perm(8, a) == select_random_perm(8, b));

  // Slot frequencies over 1e4 draws at B=5: each ~0.2 +- 0.02.
  const int64_t B = 5, draws = 10000;
  std::vector<std::vector<int64_t>> counts(static_cast<size_t>(B), std::vector<int64_t>(static_cast<size_t>(B), 0));
  SeededRng r(123);
  for (int64_t d = 0; d < draws; ++d) {
    auto p = select_random_perm(B, r);
    for (int64_t slot = 0; slot < B; ++slot) counts[static_cast<size_t>(slot)][static_cast<size_t>(p[static_cast<size_t>(slot)])] += 1;
    // validity: each perm is a bijection
    std::vector<bool> seen(static_cast<size_t>(B), false);
    for (int64_t v : p) {
      CHECK_FALSE(seen[static_cast<size_t>(v)]);
      seen[static_cast<size_t>(v)] = true;
    }
  }
  for (int64_t slot = 0; slot < B; ++slot) {
    for (int64_t v = 0; v < B; ++v) {
      const double freq = static_cast<double>(counts[static_cast<size_t>(slot)][static_cast<size_t>(v)]) / static_cast<double>(draws);
      CHECK(std::fabs(freq - 0.2) < 0.02);
    }
  }
}

TEST_CASE("select_max_euclidean: hand-computed distances") {
  FeatureMatrix m = matrix_from({0.0, 1.0, 10.0}, 3, 1);
  CHECK(select_max_euclidean(m) == std::vector<int64_t>{2, 2, 0});
}

TEST_CASE("select_max_euclidean: two identical rows force each other") {
  FeatureMatrix m = matrix_from({1.0, 2.0, 1.0, 2.0}, 2, 2);
  CHECK(select_max_euclidean(m) == std::vector<int64_t>{1, 0});
}

TEST_CASE("select_max_euclidean: random 8x5 matches the pairwise oracle") {
  SeededRng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMatrix m = matrix_from({}, 8, 5);
    for (int i = 0; i < 40; ++i) m.data.push_back(rng.uniform01() * 4 - 2);
    CHECK(select_max_euclidean(m) == oracle_max_euclidean(m));
  }
  CHECK_THROWS_AS(select_max_euclidean(matrix_from({1.0}, 1, 1)), ContractError);
}

TEST_CASE("kl_diag_gaussian: identical statistics give zero") {
  std::vector<double> mu = {0.5, -1.0, 2.0}, sigma = {1.0, 0.5, 2.0};
  CHECK(kl_diag_gaussian(mu, sigma, mu, sigma) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("kl_diag_gaussian: unit sigmas, mean gap delta gives delta^2") {
  for (double delta : {0.5, 1.0, 3.0}) {
    std::vector<double> mu1 = {0.0}, mu2 = {delta}, s = {1.0};
    CHECK(kl_diag_gaussian(mu1, s, mu2, s) == doctest::Approx(delta * delta).epsilon(1e-12));
  }
}

TEST_CASE("kl_diag_gaussian: matches the independent closed-form path") {
  SeededRng rng(78);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> mu1, mu2, s1, s2;
    for (int c = 0; c < 6; ++c) {
      mu1.push_back(rng.uniform01() * 4 - 2);
      mu2.push_back(rng.uniform01() * 4 - 2);
      s1.push_back(0.1 + rng.uniform01() * 2);
      s2.push_back(0.1 + rng.uniform01() * 2);
    }
    const double a = kl_diag_gaussian(mu1, s1, mu2, s2);
    const double b = oracle_kl(mu1, s1, mu2, s2);
    CHECK(std::fabs(a - b) < 1e-10);
    // symmetry and non-negativity
    CHECK(std::fabs(a - kl_diag_gaussian(mu2, s2, mu1, s1)) < 1e-12);
    CHECK(a >= 0.0);
  }
}

TEST_CASE("kl_diag_gaussian: non-positive sigma raises validation error") {
  std::vector<double> mu = {0.0}, good = {1.0}, bad = {0.0};
  CHECK_THROWS_AS(kl_diag_gaussian(mu, bad, mu, good), ValidationError);
}

TEST_CASE("select_max_kl: hand-evaluated three-instance case") {
  // stats N(0,1), N(0,1), N(5,1) per channel
  InstanceStats st{Tensor(Shape{3, 2}, {0, 0, 0, 0, 5, 5}), Tensor(Shape{3, 2}, 1.0)};
  CHECK(select_max_kl(st) == std::vector<int64_t>{2, 2, 0});
}

TEST_CASE("select_max_kl: identical instances fall back to the tie rule") {
  InstanceStats st{Tensor(Shape{4, 3}, 0.5), Tensor(Shape{4, 3}, 1.0)};
  CHECK(select_max_kl(st) == std::vector<int64_t>{1, 0, 0, 0});
}

TEST_CASE("select_max_kl: random batches match the brute-force oracle") {
  SeededRng rng(79);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t b = 2 + static_cast<int64_t>(rng.uniform_int(15));
    InstanceStats st{random_tensor(Shape{b, 4}, rng), random_tensor(Shape{b, 4}, rng, false, 0.1, 2.0)};
    CHECK(select_max_kl(st) == oracle_max_kl(st));
  }
  InstanceStats tiny{Tensor(Shape{1, 2}, 0.0), Tensor(Shape{1, 2}, 1.0)};
  CHECK_THROWS_AS(select_max_kl(tiny), ContractError);
}

TEST_CASE("all pairwise selectors avoid self-selection") {
  SeededRng rng(80);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t b = 2 + static_cast<int64_t>(rng.uniform_int(10));
    Tensor z = random_tensor(Shape{b, 3, 3, 3}, rng);
    FeatureMatrix m = flatten_features(z);
    InstanceStats st = instance_stats(z, 1e-6);
    for (const auto& ref : {select_least_dot(correlation_matrix(m)), select_max_euclidean(m), select_max_kl(st)}) {
      for (int64_t i = 0; i < b; ++i) {
        CHECK(ref[static_cast<size_t>(i)] != i);
        CHECK(ref[static_cast<size_t>(i)] >= 0);
        CHECK(ref[static_cast<size_t>(i)] < b);
      }
    }
  }
}

TEST_CASE("strategy names parse both short and long forms") {
  CHECK(parse_strategy("m1") == SelectionStrategy::RandomShuffle);
  CHECK(parse_strategy("RA") == SelectionStrategy::LeastDotProduct);
  CHECK(parse_strategy("m2") == SelectionStrategy::MaxEuclidean);
  CHECK(parse_strategy("MaxKL") == SelectionStrategy::MaxKL);
  CHECK(parse_strategy(to_string(SelectionStrategy::LeastDotProduct)) == SelectionStrategy::LeastDotProduct);
  CHECK_THROWS_AS(parse_strategy("bogus"), ValidationError);
}
