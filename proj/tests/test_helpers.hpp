#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fusestyle/rng.hpp"
#include "fusestyle/tensor.hpp"

namespace testutil {

using fusestyle::SeededRng;
using fusestyle::Shape;
using fusestyle::Tensor;

inline Tensor random_tensor(Shape shape, SeededRng& rng, bool requires_grad = false, double lo = -1.0,
                            double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = lo + rng.uniform01() * (hi - lo);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Relative error denominated by max(|a|,|b|,1e-8).
inline double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-8});
    m = std::max(m, std::fabs(a[i] - b[i]) / denom);
  }
  return m;
}

// Independent six-loop convolution oracle (no shared code with the library
// implementation).
inline std::vector<double> naive_conv2d(const std::vector<double>& in, int64_t B, int64_t C, int64_t H, int64_t W,
                                        const std::vector<double>& kernel, int64_t F, int64_t K,
                                        const std::vector<double>& bias, int64_t stride, int64_t padding) {
  const int64_t Ho = (H + 2 * padding - K) / stride + 1;
  const int64_t Wo = (W + 2 * padding - K) / stride + 1;
  std::vector<double> out(static_cast<size_t>(B * F * Ho * Wo), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = bias[static_cast<size_t>(f)];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ky = 0; ky < K; ++ky)
              for (int64_t kx = 0; kx < K; ++kx) {
                const int64_t iy = oy * stride + ky - padding;
                const int64_t ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += in[static_cast<size_t>(((b * C + c) * H + iy) * W + ix)] *
                       kernel[static_cast<size_t>(((f * C + c) * K + ky) * K + kx)];
              }
          out[static_cast<size_t>(((b * F + f) * Ho + oy) * Wo + ox)] = acc;
        }
  return out;
}

// Triple-loop matmul oracle for dense: out[b,m] = bias[m] + sum_n in[b,n]*w[m,n].
inline std::vector<double> naive_dense(const std::vector<double>& in, int64_t B, int64_t N,
                                       const std::vector<double>& w, int64_t M, const std::vector<double>& bias) {
  std::vector<double> out(static_cast<size_t>(B * M), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t m = 0; m < M; ++m) {
      double acc = bias[static_cast<size_t>(m)];
      for (int64_t n = 0; n < N; ++n) acc += in[static_cast<size_t>(b * N + n)] * w[static_cast<size_t>(m * N + n)];
      out[static_cast<size_t>(b * M + m)] = acc;
    }
  return out;
}

inline std::vector<double> naive_avgpool(const std::vector<double>& in, int64_t B, int64_t C, int64_t H, int64_t W,
                                         int64_t window) {
  const int64_t Ho = H / window, Wo = W / window;
  std::vector<double> out(static_cast<size_t>(B * C * Ho * Wo), 0.0);
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (int64_t dy = 0; dy < window; ++dy)
          for (int64_t dx = 0; dx < window; ++dx)
            acc += in[static_cast<size_t>((bc * H + oy * window + dy) * W + ox * window + dx)];
        out[static_cast<size_t>((bc * Ho + oy) * Wo + ox)] = acc / static_cast<double>(window * window);
      }
  return out;
}

}  // namespace testutil
