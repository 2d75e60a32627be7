#pragma once

#include <span>
#include <vector>

#include "roads/autograd.hpp"

// Differentiable tensor operations. Image-like tensors are laid out as
// (batch, channels, height, width); token tensors as (batch, tokens, dim).
namespace roads::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// a * x + b, elementwise with scalar coefficients.
Var affine(const Var& x, double a, double b);
Var relu(const Var& x);
Var gelu(const Var& x);
Var reshape(const Var& x, Shape shape);

// x: (B, Cin, H, W), weight: (Cout, Cin, k, k), bias: (Cout) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
// x: (..., in), weight: (out, in), bias: (out) or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
// Normalizes over the last axis.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var upsample_nearest2x(const Var& x);
// Non-overlapping k x k average pooling; H and W must be divisible by k.
Var avg_pool(const Var& x, int k);
// (B, C, H, W) -> (B, C)
Var global_avg_pool(const Var& x);
// (B, C, H, W) -> (B, 2C): per-channel spatial mean then sqrt(var + eps).
Var channel_moments(const Var& x, double eps);
Var concat_channels(std::span<const Var> xs);

// (B, C, H, W) <-> (B, H*W, C)
Var to_tokens(const Var& x);
Var from_tokens(const Var& tokens, int height, int width);
// Concatenate (B, L_i, D) along the token axis.
Var concat_tokens(std::span<const Var> xs);
// (B, L, D) -> (B, D)
Var mean_tokens(const Var& x);
// table: (N, ...) -> (len(index), ...). Gradient reaches only the selected rows.
Var gather_rows(const Var& table, std::span<const int> index);

// Scaled dot-product attention softmax(Q K^T / sqrt(d_k)) V, split over
// `heads` equal slices of the feature axis and re-concatenated.
// q: (B, Lq, D), k and v: (B, Lk, D).
Var attention(const Var& q, const Var& k, const Var& v, int heads);
// Attention weights for one batch element and head, (Lq, Lk). No graph.
Tensor attention_weights(const Tensor& q, const Tensor& k, int heads, int batch, int head);

// gamma * (x - mean) / (std + eps) + beta per (sample, channel); std is the
// population standard deviation over the spatial extent.
// x: (B, C, H, W), gamma and beta: (B, C).
Var adain(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// 1 - cos(a, b) along axis 1. a, b: (B, C, rest...) -> (B, rest...).
// Norms are clamped below at eps.
Var cosine_distance(const Var& a, const Var& b, double eps);

// Mean softmax cross-entropy. logits: (B, N).
Var cross_entropy(const Var& logits, std::span<const int> labels);

Var mean(const Var& x);
Var sum(const Var& x);

}  // namespace roads::ops
