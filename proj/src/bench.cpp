#include "fusestyle/bench.hpp"

#include <algorithm>
#include <chrono>

#include <fmt/format.h>

#include "fusestyle/error.hpp"
#include "fusestyle/rng.hpp"
#include "fusestyle/stats.hpp"

namespace fusestyle {

namespace {

using Clock = std::chrono::steady_clock;

int64_t selection_sink(const std::vector<int64_t>& indices) {
  int64_t s = 0;
  for (int64_t i : indices) s += i;
  return s;
}

}  // namespace

std::vector<BenchRow> bench_strategies(const std::vector<int64_t>& batch_sizes,
                                       const std::vector<std::array<int64_t, 3>>& feature_shapes, int reps,
                                       uint64_t seed) {
  if (reps < 1) throw ValidationError("bench: reps must be >= 1");
  std::vector<BenchRow> rows;
  volatile int64_t sink = 0;
  for (const auto& shape : feature_shapes) {
    const int64_t c = shape[0], h = shape[1], w = shape[2];
    for (int64_t b : batch_sizes) {
      SeededRng data_rng(derive_seed(seed, static_cast<uint64_t>(b * 1000 + c)));
      std::vector<double> values(static_cast<size_t>(b * c * h * w));
      for (auto& v : values) v = data_rng.uniform01() * 2.0 - 1.0;
      Tensor features(Shape{b, c, h, w}, std::move(values));

      for (SelectionStrategy strategy : {SelectionStrategy::RandomShuffle, SelectionStrategy::LeastDotProduct,
                                         SelectionStrategy::MaxEuclidean, SelectionStrategy::MaxKL}) {
        std::vector<double> samples;
        samples.reserve(static_cast<size_t>(reps));
        SeededRng perm_rng(derive_seed(seed, 17));
        for (int r = 0; r < reps; ++r) {
          const auto start = Clock::now();
          std::vector<int64_t> ref;
          switch (strategy) {
            case SelectionStrategy::RandomShuffle:
              ref = select_random_perm(b, perm_rng);
              break;
            case SelectionStrategy::LeastDotProduct:
              ref = select_least_dot(correlation_matrix(flatten_features(features)));
              break;
            case SelectionStrategy::MaxEuclidean:
              ref = select_max_euclidean(flatten_features(features));
              break;
            case SelectionStrategy::MaxKL:
              ref = select_max_kl(instance_stats(features, 1e-6));
              break;
          }
          const auto stop = Clock::now();
          sink = sink + selection_sink(ref);
          samples.push_back(std::chrono::duration<double, std::micro>(stop - start).count());
        }
        std::sort(samples.begin(), samples.end());
        rows.push_back({strategy, b, c * h * w, samples[samples.size() / 2]});
      }
    }
  }
  (void)sink;
  return rows;
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::string out = fmt::format("{:<16} {:>6} {:>10} {:>14}\n", "strategy", "batch", "features", "median(us)");
  for (const auto& r : rows) {
    out += fmt::format("{:<16} {:>6} {:>10} {:>14.1f}\n", to_string(r.strategy), r.batch, r.feature_size,
                       r.median_us);
  }
  return out;
}

std::string format_bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "strategy,batch,features,median_us\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.3f}\n", to_string(r.strategy), r.batch, r.feature_size, r.median_us);
  }
  return out;
}

}  // namespace fusestyle
