#pragma once

#include <vector>

#include "dsdg/autograd.hpp"

// Differentiable operations on Var. Image tensors are NCHW; latent batches
// are [N, D]. Binary elementwise ops require identical shapes.
namespace dsdg::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& x, double c);
Var scale(const Var& x, double c);

Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);

Var sum(const Var& x);
Var mean(const Var& x);
// Reduce every axis but the first: [N, ...] -> [N, 1].
Var sum_per_sample(const Var& x);
Var mean_per_sample(const Var& x);
// [N, C, H, W] -> [N, C]
Var channel_mean(const Var& x);

// x [N, in], weight [out, in], bias [out] (may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias);

// weight [O, C, kh, kw], bias [O] (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// weight [Ci, Co, kh, kw]; output side (H-1)*stride - 2*pad + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// weight [C, 1, kh, kw]: one filter per channel.
Var depthwise_conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// [O, C, kh, kw] -> [O, C, 1, 1], summing each kernel's taps.
Var kernel_sum(const Var& weight);

Var max_pool2d(const Var& x, int kernel, int stride, int pad);
Var resize_nearest(const Var& x, int out_h, int out_w);

// Concatenate / slice along axis 1.
Var concat(const std::vector<Var>& xs);
Var slice(const Var& x, int begin, int end);
Var reshape(const Var& x, Shape shape);

// Mean softmax cross-entropy. logits [N, K]; labels in [0, K).
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

}  // namespace dsdg::ops

namespace dsdg {

inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return ops::div(a, b); }
inline Var operator*(const Var& a, double c) { return ops::scale(a, c); }
inline Var operator*(double c, const Var& a) { return ops::scale(a, c); }
inline Var operator+(const Var& a, double c) { return ops::add_scalar(a, c); }
inline Var operator-(const Var& a) { return ops::scale(a, -1.0); }

}  // namespace dsdg
