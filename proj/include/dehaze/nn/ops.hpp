#pragma once

#include <span>

#include "dehaze/nn/tape.hpp"

namespace dehaze::nn {

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_scalar(Var a, float s);
Var silu(Var a);
Var tanh(Var a);

/// out[n] = a[n] * x[n] + b[n], coefficients constant per sample.
Var affine_per_sample(Var x, std::span<const float> a, std::span<const float> b);
/// out[n] = a[n] * x[n] + b[n] * y[n].
Var axpby_per_sample(Var x, std::span<const float> a, Var y, std::span<const float> b);

// Convolutional building blocks.
/// Stride-1 convolution with square kernel, weight {Cout, Cin, k, k}, bias {1, Cout, 1, 1}.
Var conv2d(Var x, Var weight, Var bias, int padding);
Var avg_pool2(Var x);
Var upsample2(Var x);
Var concat_channels(Var a, Var b);
/// Block-average down to (oh, ow); input extents must be multiples.
Var pool_to(Var x, int oh, int ow);
Var flatten(Var x);
/// x * (1 + gamma) + beta with gamma, beta of shape {N, C, 1, 1}.
Var film(Var x, Var gamma, Var beta);
/// x {N, D}, weight {E, D}, bias {1, E} -> {N, E}.
Var linear(Var x, Var weight, Var bias);

// Reductions to a scalar.
Var sum(Var a);
/// sum((a - b)^2) over all elements.
Var squared_error_sum(Var a, Var b);
/// Sum of elementwise binary cross-entropy with logits against fixed targets.
Var bce_with_logits_sum(Var logits, const Tensor& targets);
/// Unbiased MMD^2 between row sets fx {m, d} and fy {n, d} under
/// k(a, b) = (a.b / d + 1)^3. Requires m, n >= 2.
Var mmd2_unbiased_poly3(Var fx, Var fy);
/// Same estimator on plain feature rows, evaluated and returned in double.
double mmd2_unbiased_poly3_value(const Tensor& fx, const Tensor& fy);

} // namespace dehaze::nn
