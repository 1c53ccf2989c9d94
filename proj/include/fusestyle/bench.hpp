#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fusestyle/selection.hpp"

namespace fusestyle {

struct BenchRow {
  SelectionStrategy strategy;
  int64_t batch = 0;
  int64_t feature_size = 0;  // C*H*W
  double median_us = 0.0;
};

// Times one reference-batch selection end to end from a raw [B,C,H,W]
// feature tensor (flattening or statistics included, as each strategy
// requires), median over `reps` calls.
std::vector<BenchRow> bench_strategies(const std::vector<int64_t>& batch_sizes,
                                       const std::vector<std::array<int64_t, 3>>& feature_shapes, int reps,
                                       uint64_t seed);

std::string format_bench_table(const std::vector<BenchRow>& rows);
std::string format_bench_csv(const std::vector<BenchRow>& rows);

}  // namespace fusestyle
