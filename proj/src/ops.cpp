#include "fusestyle/ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "fusestyle/error.hpp"

namespace fusestyle {

namespace {

using detail::check_finite;
using detail::ensure_grad;

// Suspends tape recording for the lifetime of the guard (used by the
// finite-difference oracle so probe evaluations never pollute the log).
class TapeSuspend {
 public:
  TapeSuspend() : saved_(detail::exchange_active_tape(nullptr)) {}
  ~TapeSuspend() { detail::exchange_active_tape(saved_); }

 private:
  GradientTape* saved_;
};

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_rank(const Tensor& t, int64_t rank, const char* op) {
  if (t.shape().rank() != rank) {
    throw DimensionError(fmt::format("{}: expected rank-{} tensor, got shape {}", op, rank, t.shape().to_string()));
  }
}

// Split dot product; four independent accumulators keep the reduction
// pipelined while the summation order stays fixed.
double dot4(const double* a, const double* b, int64_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

void axpy(double alpha, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sum_n(const double* a, int64_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i];
    s1 += a[i + 1];
    s2 += a[i + 2];
    s3 += a[i + 3];
  }
  for (; i < n; ++i) s0 += a[i];
  return (s0 + s1) + (s2 + s3);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride, int padding) {
  require_rank(input, 4, "conv2d");
  require_rank(kernels, 4, "conv2d kernels");
  require_rank(bias, 1, "conv2d bias");
  const int64_t B = input.shape()[0], C = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
  const int64_t F = kernels.shape()[0], K = kernels.shape()[2];
  if (kernels.shape()[1] != C) {
    throw DimensionError(fmt::format("conv2d: kernel channels {} != input channels {}", kernels.shape()[1], C));
  }
  if (kernels.shape()[3] != K) {
    throw DimensionError(fmt::format("conv2d: kernels must be square, got {}", kernels.shape().to_string()));
  }
  if (bias.shape()[0] != F) {
    throw DimensionError(fmt::format("conv2d: bias size {} != kernel count {}", bias.shape()[0], F));
  }
  if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValidationError("conv2d: padding must be >= 0");
  const int64_t Hp = H + 2 * padding, Wp = W + 2 * padding;
  if (K > Hp || K > Wp) {
    throw DimensionError(fmt::format("conv2d: kernel {} exceeds padded input {}x{}", K, Hp, Wp));
  }
  const int64_t Ho = (Hp - K) / stride + 1;
  const int64_t Wo = (Wp - K) / stride + 1;

  const bool recording = should_record({&input, &kernels, &bias});
  Tensor out(Shape{B, F, Ho, Wo}, 0.0, recording);

  const double* in = input.values().data();
  const double* kw = kernels.values().data();
  const double* bs = bias.values().data();
  double* ov = out.values().data();

  std::vector<double> pad(static_cast<size_t>(C * Hp * Wp));
  for (int64_t b = 0; b < B; ++b) {
    std::fill(pad.begin(), pad.end(), 0.0);
    for (int64_t c = 0; c < C; ++c) {
      for (int64_t y = 0; y < H; ++y) {
        std::copy_n(in + ((b * C + c) * H + y) * W, W, pad.data() + (c * Hp + y + padding) * Wp + padding);
      }
    }
    for (int64_t f = 0; f < F; ++f) {
      double* fo = ov + ((b * F + f) * Ho) * Wo;
      std::fill_n(fo, Ho * Wo, bs[f]);
      for (int64_t c = 0; c < C; ++c) {
        if (K == 3 && stride == 1) {
          // Hot path for the 3x3 stride-1 backbone convolutions.
          const double* kr = kw + (f * C + c) * 9;
          for (int64_t oy = 0; oy < Ho; ++oy) {
            const double* r0 = pad.data() + (c * Hp + oy) * Wp;
            const double* r1 = r0 + Wp;
            const double* r2 = r1 + Wp;
            double* op = fo + oy * Wo;
            for (int64_t ox = 0; ox < Wo; ++ox) {
              op[ox] += kr[0] * r0[ox] + kr[1] * r0[ox + 1] + kr[2] * r0[ox + 2] +
                        kr[3] * r1[ox] + kr[4] * r1[ox + 1] + kr[5] * r1[ox + 2] +
                        kr[6] * r2[ox] + kr[7] * r2[ox + 1] + kr[8] * r2[ox + 2];
            }
          }
          continue;
        }
        for (int64_t ky = 0; ky < K; ++ky) {
          for (int64_t kx = 0; kx < K; ++kx) {
            const double w = kw[((f * C + c) * K + ky) * K + kx];
            for (int64_t oy = 0; oy < Ho; ++oy) {
              const double* ip = pad.data() + (c * Hp + oy * stride + ky) * Wp + kx;
              double* op = fo + oy * Wo;
              if (stride == 1) {
                for (int64_t ox = 0; ox < Wo; ++ox) op[ox] += w * ip[ox];
              } else {
                for (int64_t ox = 0; ox < Wo; ++ox) op[ox] += w * ip[ox * stride];
              }
            }
          }
        }
      }
    }
  }
  check_finite("conv2d", out.values());

  if (recording) {
    auto in_d = input.data_ptr();
    auto k_d = kernels.data_ptr();
    auto b_d = bias.data_ptr();
    auto out_d = out.data_ptr();
    const int s = stride, p = padding;
    active_tape()->record([in_d, k_d, b_d, out_d, B, C, H, W, F, K, Ho, Wo, Hp, Wp, s, p]() {
      const std::vector<double>& gout = ensure_grad(*out_d);
      const double* kw = k_d->values.data();
      const double* in = in_d->values.data();
      const bool need_in = in_d->requires_grad;
      const bool need_k = k_d->requires_grad;
      const bool need_b = b_d->requires_grad;

      std::vector<double> pad(static_cast<size_t>(C * Hp * Wp));
      std::vector<double> dpad;
      if (need_in) dpad.resize(static_cast<size_t>(C * Hp * Wp));
      std::vector<double> gplane(static_cast<size_t>(4 * ((Ho - 1) * Wp + Wo)), 0.0);

      std::vector<double>* gin = need_in ? &ensure_grad(*in_d) : nullptr;
      std::vector<double>* gk = need_k ? &ensure_grad(*k_d) : nullptr;
      std::vector<double>* gb = need_b ? &ensure_grad(*b_d) : nullptr;

      for (int64_t b = 0; b < B; ++b) {
        if (need_k) {
          std::fill(pad.begin(), pad.end(), 0.0);
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t y = 0; y < H; ++y) {
              std::copy_n(in + ((b * C + c) * H + y) * W, W, pad.data() + (c * Hp + y + p) * Wp + p);
            }
          }
        }
        if (need_in) std::fill(dpad.begin(), dpad.end(), 0.0);
        if (s == 1) {
          // Stride-1 hot path: embed output-gradient planes into
          // zero-separated buffers with the padded row stride, so every
          // kernel tap becomes one long contiguous sweep (the interleaved
          // zeros annihilate the row-wrap terms). Four filters share each
          // sweep to amortize the pad/dpad traffic.
          const int64_t span = (Ho - 1) * Wp + Wo;
          for (int64_t f0 = 0; f0 < F; f0 += 4) {
            const int64_t nf = std::min<int64_t>(4, F - f0);
            for (int64_t q = 0; q < nf; ++q) {
              const double* go = gout.data() + ((b * F + f0 + q) * Ho) * Wo;
              if (need_b) (*gb)[static_cast<size_t>(f0 + q)] += sum_n(go, Ho * Wo);
              double* gp = gplane.data() + q * span;
              std::fill_n(gp, span, 0.0);
              for (int64_t oy = 0; oy < Ho; ++oy) std::copy_n(go + oy * Wo, Wo, gp + oy * Wp);
            }
            const double* g0 = gplane.data();
            const double* g1 = gplane.data() + span;
            const double* g2 = gplane.data() + 2 * span;
            const double* g3 = gplane.data() + 3 * span;
            for (int64_t c = 0; c < C; ++c) {
              for (int64_t ky = 0; ky < K; ++ky) {
                for (int64_t kx = 0; kx < K; ++kx) {
                  const int64_t tap = (c * K + ky) * K + kx;
                  const int64_t base = (c * Hp + ky) * Wp + kx;
                  const double* pp = pad.data() + base;
                  double* dp = need_in ? dpad.data() + base : nullptr;
                  double w0 = 0, w1 = 0, w2 = 0, w3 = 0;
                  if (nf == 4) {
                    const double k0 = kw[(f0 * C) * K * K + tap];
                    const double k1 = kw[((f0 + 1) * C) * K * K + tap];
                    const double k2 = kw[((f0 + 2) * C) * K * K + tap];
                    const double k3 = kw[((f0 + 3) * C) * K * K + tap];
                    double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
                    if (need_in && need_k) {
                      for (int64_t i = 0; i < span; ++i) {
                        const double p = pp[i];
                        a0 += p * g0[i];
                        a1 += p * g1[i];
                        a2 += p * g2[i];
                        a3 += p * g3[i];
                        dp[i] += k0 * g0[i] + k1 * g1[i] + k2 * g2[i] + k3 * g3[i];
                      }
                    } else if (need_k) {
                      for (int64_t i = 0; i < span; ++i) {
                        const double p = pp[i];
                        a0 += p * g0[i];
                        a1 += p * g1[i];
                        a2 += p * g2[i];
                        a3 += p * g3[i];
                      }
                    } else {
                      for (int64_t i = 0; i < span; ++i) {
                        dp[i] += k0 * g0[i] + k1 * g1[i] + k2 * g2[i] + k3 * g3[i];
                      }
                    }
                    w0 = a0;
                    w1 = a1;
                    w2 = a2;
                    w3 = a3;
                  } else {
                    for (int64_t q = 0; q < nf; ++q) {
                      const double* gq = gplane.data() + q * span;
                      const double kq = kw[((f0 + q) * C) * K * K + tap];
                      if (need_in) axpy(kq, gq, dp, span);
                      double acc = need_k ? dot4(pp, gq, span) : 0.0;
                      if (q == 0) w0 = acc;
                      if (q == 1) w1 = acc;
                      if (q == 2) w2 = acc;
                    }
                  }
                  if (need_k) {
                    if (nf > 0) (*gk)[static_cast<size_t>((f0 * C) * K * K + tap)] += w0;
                    if (nf > 1) (*gk)[static_cast<size_t>(((f0 + 1) * C) * K * K + tap)] += w1;
                    if (nf > 2) (*gk)[static_cast<size_t>(((f0 + 2) * C) * K * K + tap)] += w2;
                    if (nf > 3) (*gk)[static_cast<size_t>(((f0 + 3) * C) * K * K + tap)] += w3;
                  }
                }
              }
            }
          }
        } else {
          for (int64_t f = 0; f < F; ++f) {
            const double* go = gout.data() + ((b * F + f) * Ho) * Wo;
            if (need_b) (*gb)[static_cast<size_t>(f)] += sum_n(go, Ho * Wo);
            for (int64_t c = 0; c < C; ++c) {
              for (int64_t ky = 0; ky < K; ++ky) {
                for (int64_t kx = 0; kx < K; ++kx) {
                  const int64_t kidx = ((f * C + c) * K + ky) * K + kx;
                  const double w = kw[kidx];
                  double wacc = 0.0;
                  for (int64_t oy = 0; oy < Ho; ++oy) {
                    const double* go_row = go + oy * Wo;
                    const int64_t base = (c * Hp + oy * s + ky) * Wp + kx;
                    double* dp = need_in ? dpad.data() + base : nullptr;
                    const double* pp = pad.data() + base;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                      if (need_in) dp[ox * s] += w * go_row[ox];
                      if (need_k) wacc += pp[ox * s] * go_row[ox];
                    }
                  }
                  if (need_k) (*gk)[static_cast<size_t>(kidx)] += wacc;
                }
              }
            }
          }
        }
        if (need_in) {
          for (int64_t c = 0; c < C; ++c) {
            for (int64_t y = 0; y < H; ++y) {
              const double* src = dpad.data() + (c * Hp + y + p) * Wp + p;
              double* dst = gin->data() + ((b * C + c) * H + y) * W;
              for (int64_t x = 0; x < W; ++x) dst[x] += src[x];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& input) {
  const bool recording = should_record({&input});
  Tensor out(input.shape(), 0.0, recording);
  const auto& iv = input.values();
  auto& ov = out.values();
  for (size_t i = 0; i < iv.size(); ++i) ov[i] = iv[i] > 0.0 ? iv[i] : 0.0;
  check_finite("relu", ov);

  if (recording) {
    auto in_d = input.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([in_d, out_d]() {
      if (!in_d->requires_grad) return;
      const auto& gout = ensure_grad(*out_d);
      auto& gin = ensure_grad(*in_d);
      const auto& iv = in_d->values;
      for (size_t i = 0; i < iv.size(); ++i) {
        if (iv[i] > 0.0) gin[i] += gout[i];
      }
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& input, int window) {
  require_rank(input, 4, "avgpool2d");
  if (window < 1) throw ValidationError("avgpool2d: window must be >= 1");
  const int64_t B = input.shape()[0], C = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
  if (H % window != 0 || W % window != 0) {
    throw DimensionError(
        fmt::format("avgpool2d: window {} does not divide spatial extent {}x{}", window, H, W));
  }
  const int64_t Ho = H / window, Wo = W / window;
  const double inv = 1.0 / (static_cast<double>(window) * window);

  const bool recording = should_record({&input});
  Tensor out(Shape{B, C, Ho, Wo}, 0.0, recording);
  const double* in = input.values().data();
  double* ov = out.values().data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* plane = in + bc * H * W;
    double* oplane = ov + bc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (int64_t dy = 0; dy < window; ++dy) {
          const double* row = plane + (oy * window + dy) * W + ox * window;
          for (int64_t dx = 0; dx < window; ++dx) acc += row[dx];
        }
        oplane[oy * Wo + ox] = acc * inv;
      }
    }
  }
  check_finite("avgpool2d", out.values());

  if (recording) {
    auto in_d = input.data_ptr();
    auto out_d = out.data_ptr();
    const int64_t win = window;
    active_tape()->record([in_d, out_d, B, C, H, W, Ho, Wo, win, inv]() {
      if (!in_d->requires_grad) return;
      const auto& gout = ensure_grad(*out_d);
      auto& gin = ensure_grad(*in_d);
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double* gop = gout.data() + bc * Ho * Wo;
        double* gip = gin.data() + bc * H * W;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const double g = gop[oy * Wo + ox] * inv;
            for (int64_t dy = 0; dy < win; ++dy) {
              double* row = gip + (oy * win + dy) * W + ox * win;
              for (int64_t dx = 0; dx < win; ++dx) row[dx] += g;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense");
  require_rank(weight, 2, "dense weight");
  require_rank(bias, 1, "dense bias");
  const int64_t B = input.shape()[0], N = input.shape()[1];
  const int64_t M = weight.shape()[0];
  if (weight.shape()[1] != N) {
    throw DimensionError(fmt::format("dense: weight inner dim {} != input dim {}", weight.shape()[1], N));
  }
  if (bias.shape()[0] != M) {
    throw DimensionError(fmt::format("dense: bias size {} != output dim {}", bias.shape()[0], M));
  }

  const bool recording = should_record({&input, &weight, &bias});
  Tensor out(Shape{B, M}, 0.0, recording);
  const double* in = input.values().data();
  const double* w = weight.values().data();
  const double* bs = bias.values().data();
  double* ov = out.values().data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t m = 0; m < M; ++m) {
      ov[b * M + m] = bs[m] + dot4(in + b * N, w + m * N, N);
    }
  }
  check_finite("dense", out.values());

  if (recording) {
    auto in_d = input.data_ptr();
    auto w_d = weight.data_ptr();
    auto b_d = bias.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([in_d, w_d, b_d, out_d, B, N, M]() {
      const auto& gout = ensure_grad(*out_d);
      const double* in = in_d->values.data();
      const double* w = w_d->values.data();
      if (in_d->requires_grad) {
        auto& gin = ensure_grad(*in_d);
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t m = 0; m < M; ++m) {
            axpy(gout[static_cast<size_t>(b * M + m)], w + m * N, gin.data() + b * N, N);
          }
        }
      }
      if (w_d->requires_grad) {
        auto& gw = ensure_grad(*w_d);
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t m = 0; m < M; ++m) {
            axpy(gout[static_cast<size_t>(b * M + m)], in + b * N, gw.data() + m * N, N);
          }
        }
      }
      if (b_d->requires_grad) {
        auto& gb = ensure_grad(*b_d);
        for (int64_t b = 0; b < B; ++b) {
          for (int64_t m = 0; m < M; ++m) gb[static_cast<size_t>(m)] += gout[static_cast<size_t>(b * M + m)];
        }
      }
    });
  }
  return out;
}

Tensor flatten2d(const Tensor& input) {
  if (input.shape().rank() < 2) throw DimensionError("flatten2d: rank must be >= 2");
  const int64_t B = input.shape()[0];
  const int64_t rest = input.shape().numel() / B;
  const bool recording = should_record({&input});
  Tensor out(Shape{B, rest}, input.values(), recording);

  if (recording) {
    auto in_d = input.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([in_d, out_d]() {
      if (!in_d->requires_grad) return;
      const auto& gout = ensure_grad(*out_d);
      auto& gin = ensure_grad(*in_d);
      for (size_t i = 0; i < gin.size(); ++i) gin[i] += gout[i];
    });
  }
  return out;
}

Tensor sigmoid_bce_loss(const Tensor& logits, const Tensor& targets) {
  require_rank(logits, 2, "sigmoid_bce_loss");
  if (logits.shape()[1] != 1) {
    throw DimensionError(fmt::format("sigmoid_bce_loss: expected [B,1] logits, got {}", logits.shape().to_string()));
  }
  if (!(targets.shape() == logits.shape())) {
    throw DimensionError(fmt::format("sigmoid_bce_loss: target shape {} != logit shape {}",
                                     targets.shape().to_string(), logits.shape().to_string()));
  }
  const auto& tv = targets.values();
  for (double t : tv) {
    if (t != 0.0 && t != 1.0) throw ValidationError(fmt::format("sigmoid_bce_loss: target {} not in {{0,1}}", t));
  }

  const int64_t B = logits.shape()[0];
  const auto& zv = logits.values();
  // Stable form: max(z,0) - z*t + log(1 + exp(-|z|)).
  double acc = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const double z = zv[static_cast<size_t>(b)];
    const double t = tv[static_cast<size_t>(b)];
    acc += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  const bool recording = should_record({&logits});
  Tensor out = Tensor::scalar(acc / static_cast<double>(B), recording);
  check_finite("sigmoid_bce_loss", out.values());

  if (recording) {
    auto z_d = logits.data_ptr();
    auto t_d = targets.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([z_d, t_d, out_d, B]() {
      if (!z_d->requires_grad) return;
      const double g = ensure_grad(*out_d)[0] / static_cast<double>(B);
      auto& gz = ensure_grad(*z_d);
      for (int64_t b = 0; b < B; ++b) {
        const double z = z_d->values[static_cast<size_t>(b)];
        const double t = t_d->values[static_cast<size_t>(b)];
        const double sig = 1.0 / (1.0 + std::exp(-z));
        gz[static_cast<size_t>(b)] += g * (sig - t);
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd make_backward) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError(
        fmt::format("{}: shape {} != shape {}", name, a.shape().to_string(), b.shape().to_string()));
  }
  const bool recording = should_record({&a, &b});
  Tensor out(a.shape(), 0.0, recording);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i], bv[i]);
  check_finite(name, ov);
  if (recording) make_backward(a.data_ptr(), b.data_ptr(), out.data_ptr());
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](auto a_d, auto b_d, auto out_d) {
        active_tape()->record([a_d, b_d, out_d]() {
          const auto& gout = ensure_grad(*out_d);
          if (a_d->requires_grad) {
            auto& ga = ensure_grad(*a_d);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
          }
          if (b_d->requires_grad) {
            auto& gb = ensure_grad(*b_d);
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i];
          }
        });
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](auto a_d, auto b_d, auto out_d) {
        active_tape()->record([a_d, b_d, out_d]() {
          const auto& gout = ensure_grad(*out_d);
          if (a_d->requires_grad) {
            auto& ga = ensure_grad(*a_d);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * b_d->values[i];
          }
          if (b_d->requires_grad) {
            auto& gb = ensure_grad(*b_d);
            for (size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * a_d->values[i];
          }
        });
      });
}

Tensor scale(const Tensor& a, double factor) {
  const bool recording = should_record({&a});
  Tensor out(a.shape(), 0.0, recording);
  const auto& av = a.values();
  auto& ov = out.values();
  for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * factor;
  check_finite("scale", ov);
  if (recording) {
    auto a_d = a.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([a_d, out_d, factor]() {
      if (!a_d->requires_grad) return;
      const auto& gout = ensure_grad(*out_d);
      auto& ga = ensure_grad(*a_d);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * factor;
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  const bool recording = should_record({&a});
  Tensor out = Tensor::scalar(sum_n(a.values().data(), a.size()), recording);
  check_finite("sum", out.values());
  if (recording) {
    auto a_d = a.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([a_d, out_d]() {
      if (!a_d->requires_grad) return;
      const double g = ensure_grad(*out_d)[0];
      auto& ga = ensure_grad(*a_d);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor instance_mean(const Tensor& x) {
  require_rank(x, 4, "instance_mean");
  const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  const double inv = 1.0 / static_cast<double>(HW);
  const bool recording = should_record({&x});
  Tensor out(Shape{B, C}, 0.0, recording);
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (int64_t bc = 0; bc < B * C; ++bc) ov[bc] = sum_n(xv + bc * HW, HW) * inv;
  check_finite("instance_mean", out.values());

  if (recording) {
    auto x_d = x.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([x_d, out_d, B, C, HW, inv]() {
      if (!x_d->requires_grad) return;
      const auto& gout = ensure_grad(*out_d);
      auto& gx = ensure_grad(*x_d);
      for (int64_t bc = 0; bc < B * C; ++bc) {
        const double g = gout[static_cast<size_t>(bc)] * inv;
        double* gp = gx.data() + bc * HW;
        for (int64_t i = 0; i < HW; ++i) gp[i] += g;
      }
    });
  }
  return out;
}

Tensor instance_sigma(const Tensor& x, double epsilon) {
  require_rank(x, 4, "instance_sigma");
  if (epsilon <= 0.0) throw ValidationError("instance_sigma: epsilon must be positive");
  const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  const double inv = 1.0 / static_cast<double>(HW);
  const bool recording = should_record({&x});
  Tensor out(Shape{B, C}, 0.0, recording);
  std::vector<double> means(static_cast<size_t>(B * C));
  const double* xv = x.values().data();
  double* ov = out.values().data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* p = xv + bc * HW;
    const double mu = sum_n(p, HW) * inv;
    double var = 0.0;
    for (int64_t i = 0; i < HW; ++i) {
      const double d = p[i] - mu;
      var += d * d;
    }
    means[static_cast<size_t>(bc)] = mu;
    ov[bc] = std::sqrt(var * inv + epsilon);
  }
  check_finite("instance_sigma", out.values());

  if (recording) {
    auto x_d = x.data_ptr();
    auto out_d = out.data_ptr();
    auto mu = std::make_shared<std::vector<double>>(std::move(means));
    active_tape()->record([x_d, out_d, mu, B, C, HW, inv]() {
      if (!x_d->requires_grad) return;
      const auto& gout = ensure_grad(*out_d);
      auto& gx = ensure_grad(*x_d);
      const double* xv = x_d->values.data();
      const double* sv = out_d->values.data();
      for (int64_t bc = 0; bc < B * C; ++bc) {
        // d sigma / d x_k = (x_k - mu) / (HW * sigma)
        const double g = gout[static_cast<size_t>(bc)] * inv / sv[bc];
        const double m = (*mu)[static_cast<size_t>(bc)];
        const double* p = xv + bc * HW;
        double* gp = gx.data() + bc * HW;
        for (int64_t i = 0; i < HW; ++i) gp[i] += g * (p[i] - m);
      }
    });
  }
  return out;
}

namespace {

enum class ChannelOp { Sub, Div, Mul, Add };

Tensor channel_broadcast(const Tensor& x, const Tensor& bc, ChannelOp tag, const char* name) {
  require_rank(x, 4, name);
  require_rank(bc, 2, name);
  const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  if (bc.shape()[0] != B || bc.shape()[1] != C) {
    throw DimensionError(fmt::format("{}: operand shape {} does not match [B,C]=[{},{}]", name,
                                     bc.shape().to_string(), B, C));
  }
  const bool recording = should_record({&x, &bc});
  Tensor out(x.shape(), 0.0, recording);
  const double* xv = x.values().data();
  const double* cv = bc.values().data();
  double* ov = out.values().data();
  for (int64_t k = 0; k < B * C; ++k) {
    const double s = cv[k];
    const double* xp = xv + k * HW;
    double* op = ov + k * HW;
    switch (tag) {
      case ChannelOp::Sub:
        for (int64_t i = 0; i < HW; ++i) op[i] = xp[i] - s;
        break;
      case ChannelOp::Div:
        for (int64_t i = 0; i < HW; ++i) op[i] = xp[i] / s;
        break;
      case ChannelOp::Mul:
        for (int64_t i = 0; i < HW; ++i) op[i] = xp[i] * s;
        break;
      case ChannelOp::Add:
        for (int64_t i = 0; i < HW; ++i) op[i] = xp[i] + s;
        break;
    }
  }
  check_finite(name, out.values());

  if (recording) {
    auto x_d = x.data_ptr();
    auto c_d = bc.data_ptr();
    auto out_d = out.data_ptr();
    active_tape()->record([x_d, c_d, out_d, tag, B, C, HW]() {
      const auto& gout = ensure_grad(*out_d);
      const double* xv = x_d->values.data();
      const double* cv = c_d->values.data();
      const double* ov = out_d->values.data();
      for (int64_t k = 0; k < B * C; ++k) {
        const double s = cv[k];
        const double* go = gout.data() + k * HW;
        if (x_d->requires_grad) {
          double* gx = ensure_grad(*x_d).data() + k * HW;
          switch (tag) {
            case ChannelOp::Sub:
            case ChannelOp::Add:
              for (int64_t i = 0; i < HW; ++i) gx[i] += go[i];
              break;
            case ChannelOp::Div:
              for (int64_t i = 0; i < HW; ++i) gx[i] += go[i] / s;
              break;
            case ChannelOp::Mul:
              for (int64_t i = 0; i < HW; ++i) gx[i] += go[i] * s;
              break;
          }
        }
        if (c_d->requires_grad) {
          double acc = 0.0;
          switch (tag) {
            case ChannelOp::Sub:
              acc = -sum_n(go, HW);
              break;
            case ChannelOp::Add:
              acc = sum_n(go, HW);
              break;
            case ChannelOp::Div:
              // d(x/s)/ds = -x/s^2 = -out/s
              acc = -dot4(go, ov + k * HW, HW) / s;
              break;
            case ChannelOp::Mul:
              acc = dot4(go, xv + k * HW, HW);
              break;
          }
          ensure_grad(*c_d)[static_cast<size_t>(k)] += acc;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor channel_sub(const Tensor& x, const Tensor& m) {
  return channel_broadcast(x, m, ChannelOp::Sub, "channel_sub");
}

Tensor channel_div(const Tensor& x, const Tensor& s) {
  return channel_broadcast(x, s, ChannelOp::Div, "channel_div");
}

Tensor channel_mul(const Tensor& x, const Tensor& g) {
  return channel_broadcast(x, g, ChannelOp::Mul, "channel_mul");
}

Tensor channel_add(const Tensor& x, const Tensor& b) {
  return channel_broadcast(x, b, ChannelOp::Add, "channel_add");
}

Tensor gather_rows(const Tensor& t, const std::vector<int64_t>& idx) {
  if (t.shape().rank() < 1) throw DimensionError("gather_rows: rank must be >= 1");
  const int64_t B = t.shape()[0];
  const int64_t row = t.shape().numel() / B;
  for (int64_t i : idx) {
    if (i < 0 || i >= B) throw ContractError(fmt::format("gather_rows: index {} out of range [0,{})", i, B));
  }
  Shape out_shape = t.shape();
  out_shape.dims[0] = static_cast<int64_t>(idx.size());
  const bool recording = should_record({&t});
  Tensor out(out_shape, 0.0, recording);
  const double* tv = t.values().data();
  double* ov = out.values().data();
  for (size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(tv + idx[i] * row, row, ov + static_cast<int64_t>(i) * row);
  }

  if (recording) {
    auto t_d = t.data_ptr();
    auto out_d = out.data_ptr();
    auto indices = std::make_shared<std::vector<int64_t>>(idx);
    active_tape()->record([t_d, out_d, indices, row]() {
      if (!t_d->requires_grad) return;
      const auto& gout = ensure_grad(*out_d);
      auto& gt = ensure_grad(*t_d);
      for (size_t i = 0; i < indices->size(); ++i) {
        const double* src = gout.data() + static_cast<int64_t>(i) * row;
        double* dst = gt.data() + (*indices)[i] * row;
        for (int64_t k = 0; k < row; ++k) dst[k] += src[k];
      }
    });
  }
  return out;
}

Tensor rowwise_lerp(const Tensor& a, const Tensor& b, const std::vector<double>& lambdas) {
  if (!(a.shape() == b.shape())) {
    throw DimensionError(fmt::format("rowwise_lerp: shape {} != shape {}", a.shape().to_string(),
                                     b.shape().to_string()));
  }
  const int64_t B = a.shape()[0];
  if (static_cast<int64_t>(lambdas.size()) != B) {
    throw DimensionError(fmt::format("rowwise_lerp: {} lambdas for batch {}", lambdas.size(), B));
  }
  const int64_t row = a.shape().numel() / B;
  const bool recording = should_record({&a, &b});
  Tensor out(a.shape(), 0.0, recording);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  double* ov = out.values().data();
  for (int64_t i = 0; i < B; ++i) {
    const double l = lambdas[static_cast<size_t>(i)];
    for (int64_t k = 0; k < row; ++k) {
      ov[i * row + k] = l * av[i * row + k] + (1.0 - l) * bv[i * row + k];
    }
  }
  check_finite("rowwise_lerp", out.values());

  if (recording) {
    auto a_d = a.data_ptr();
    auto b_d = b.data_ptr();
    auto out_d = out.data_ptr();
    auto lam = std::make_shared<std::vector<double>>(lambdas);
    active_tape()->record([a_d, b_d, out_d, lam, B, row]() {
      const auto& gout = ensure_grad(*out_d);
      for (int64_t i = 0; i < B; ++i) {
        const double l = (*lam)[static_cast<size_t>(i)];
        if (a_d->requires_grad) {
          auto& ga = ensure_grad(*a_d);
          for (int64_t k = 0; k < row; ++k) ga[static_cast<size_t>(i * row + k)] += l * gout[static_cast<size_t>(i * row + k)];
        }
        if (b_d->requires_grad) {
          auto& gb = ensure_grad(*b_d);
          for (int64_t k = 0; k < row; ++k) {
            gb[static_cast<size_t>(i * row + k)] += (1.0 - l) * gout[static_cast<size_t>(i * row + k)];
          }
        }
      }
    });
  }
  return out;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& point, double h) {
  if (h <= 0.0) throw ContractError("finite_difference_gradient: h must be positive");
  TapeSuspend no_recording;
  Tensor probe(point.shape(), point.values(), false);
  Tensor grad(point.shape(), 0.0, false);
  auto& pv = probe.values();
  auto& gv = grad.values();
  for (size_t i = 0; i < pv.size(); ++i) {
    const double saved = pv[i];
    pv[i] = saved + h;
    const double up = f(probe);
    pv[i] = saved - h;
    const double down = f(probe);
    pv[i] = saved;
    gv[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace fusestyle
