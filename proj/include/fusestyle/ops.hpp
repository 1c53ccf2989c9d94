#pragma once

#include <functional>
#include <vector>

#include "fusestyle/tensor.hpp"

namespace fusestyle {

// Forward operations. Each records its backward rule on the active tape when
// some input requires gradients. All outputs are checked finite.

// Direct-loop 2-D convolution. input [B,C,H,W], kernels [F,C,k,k], bias [F].
// Output [B,F,H',W'] with H' = floor((H+2*padding-k)/stride)+1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride, int padding);

Tensor relu(const Tensor& input);

// Non-overlapping mean pooling; window must divide H and W.
Tensor avgpool2d(const Tensor& input, int window);

// Affine map per batch row: out[b,m] = sum_n in[b,n]*weight[m,n] + bias[m].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

// [B,...] -> [B, rest], row-major.
Tensor flatten2d(const Tensor& input);

// Mean over the batch of the numerically stable binary cross entropy on
// logits. Targets must be exactly 0 or 1.
Tensor sigmoid_bce_loss(const Tensor& logits, const Tensor& targets);

// Elementwise ops (matching shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Full reduction to a scalar.
Tensor sum(const Tensor& a);

// Per-instance/per-channel statistics and the broadcast arithmetic used by
// the style-mixing layer. `x` is [B,C,H,W]; the [B,C] operand broadcasts
// over the spatial extent.
Tensor instance_mean(const Tensor& x);
Tensor instance_sigma(const Tensor& x, double epsilon);
Tensor channel_sub(const Tensor& x, const Tensor& m);
Tensor channel_div(const Tensor& x, const Tensor& s);
Tensor channel_mul(const Tensor& x, const Tensor& g);
Tensor channel_add(const Tensor& x, const Tensor& b);

// Row gather over dim 0: out[i] = t[idx[i]]. Backward scatter-adds.
Tensor gather_rows(const Tensor& t, const std::vector<int64_t>& idx);

// out[i,:] = lam[i]*a[i,:] + (1-lam[i])*b[i,:] on [B,C] operands.
Tensor rowwise_lerp(const Tensor& a, const Tensor& b, const std::vector<double>& lambdas);

// Central-difference gradient oracle: (f(x+h*e_i) - f(x-h*e_i)) / (2h).
// Evaluations run without tape recording.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& point, double h);

}  // namespace fusestyle
