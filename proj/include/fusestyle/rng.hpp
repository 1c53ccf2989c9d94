#pragma once

#include <cstdint>
#include <vector>
#include <random>

namespace fusestyle {

// Deterministic random source for everything in this project.
//
// std::mt19937_64 produces a bit-identical stream on every conforming
// platform; the distribution transforms below are hand-rolled because the
// <random> distribution objects are implementation-defined and would break
// the reproducibility contract across standard libraries.
class SeededRng {
 public:
  explicit SeededRng(uint64_t seed) : engine_(seed) {}

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform01();

  // Uniform double in (0, 1); safe under log/pow.
  double uniform01_open();

  // Uniform integer in [0, n). Rejection sampling, exactly uniform.
  uint64_t uniform_int(uint64_t n);

  bool bernoulli(double p);

  // Standard normal via the polar (Marsaglia) method.
  double normal();

  // Gamma(shape, 1) via Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape);

  // Beta(a, b) as Ga/(Ga+Gb).
  double beta(double a, double b);

  // Uniform random permutation of 0..n-1 (Fisher-Yates).
  std::vector<int64_t> permutation(int64_t n);

  uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used to derive independent stream seeds from one
// master seed without correlated low bits.
uint64_t splitmix64(uint64_t x);

// Seed for the `stream`-th substream of `master`.
uint64_t derive_seed(uint64_t master, uint64_t stream);

}  // namespace fusestyle
