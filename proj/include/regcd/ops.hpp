#pragma once

#include <span>
#include <vector>

#include "regcd/autograd.hpp"

// Differentiable primitives. Unless noted, fields are channel-first and the
// "channel" axis is axis 0; everything after it is treated as a flat plane.
namespace regcd::ag {

Var constant(Tensor value);

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var abs(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var cos(const Var& a);
Var sin(const Var& a);
Var square(const Var& a);

// Reductions to shape {1}.
Var sum(const Var& a);
Var mean(const Var& a);
// Mean over entries where mask != 0 (mask has the shape of `a`); zero when the mask is empty.
Var masked_mean(const Var& a, const Tensor& mask);

// Multiplies every element by a learned/derived scalar of shape {1}.
Var mul_scalar(const Var& a, const Var& s);

// Per-channel broadcasting: x {C, ...}, v {C}.
Var add_channel(const Var& x, const Var& v);
Var mul_channel(const Var& x, const Var& v);
// {C, ...} -> {C}: mean over the plane (global average pooling).
Var channel_mean(const Var& x);
// {C, ...} -> {1, ...}: sum over channels.
Var sum_channels(const Var& x);
// x {C, ...} times m {1, ...} broadcast over channels.
Var mul_plane(const Var& x, const Var& m);

// Softmax over the channel axis, independently at each plane position.
Var softmax_channels(const Var& x);
Var log_softmax_channels(const Var& x);
// Per-position normalization over channels with affine gamma/beta {C}.
Var layer_norm_channels(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Zero-mean, unit-variance over the channels where mask != 0, at each position;
// masked-out entries are zero. mask has the shape of x.
Var masked_standardize_channels(const Var& x, const Tensor& mask, double eps = 1e-6);
// x / sqrt(|x|^2 + eps^2) over channels.
Var l2_normalize_channels(const Var& x, double eps = 1e-8);
// {C, ...} -> {1, ...}: Euclidean norm over channels; the subgradient at 0 is 0.
Var norm_channels(const Var& x);

// 2-D matrix product with optional transposes.
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
// 1x1 map: w {Cout, Cin} applied to x {Cin, ...}; bias {Cout} may be undefined.
Var linear(const Var& x, const Var& w, const Var& bias);
// x {Cin, H, W}, w {Cout, Cin, k, k}, bias {Cout} (may be undefined).
Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);

Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& x, int begin, int end);
Var reshape(const Var& x, Shape shape);

// Bilinear resampling with half-pixel centers and edge clamping.
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var avg_pool2(const Var& x);

// Four-neighbor bilinear sampling of f {C, H, W} at x + flow(x), flow {2, H, W}
// with channel 0 = horizontal displacement. Samples whose neighborhood leaves
// the grid are zero and flagged uncovered.
struct WarpOutput {
  Var values;
  Tensor covered;  // {1, H, W}, 1 where all four neighbors were in-bounds
};
WarpOutput warp(const Var& f, const Var& flow);

// out[(dy+r)(2r+1) + (dx+r), y, x] = mean_c fa[c, y, x] * fb[c, y+dy, x+dx]; zero outside.
Var local_correlation(const Var& fa, const Var& fb, int radius);

// out[k, y, x] = mask[k, y, x] * sum_c a[c, y, x] * sources[s_k][c, y + dy_k, x + dx_k];
// zero where the shifted position leaves the grid.
struct IntegerShift {
  int source;
  int dx, dy;
};
Var shifted_dot(const Var& a, std::span<const Var> sources, const std::vector<IntegerShift>& shifts, const Tensor& mask);

// Mean binary cross-entropy with logits over mask != 0; target, mask shaped like logits.
Var bce_with_logits(const Var& logits, const Tensor& target, const Tensor& mask);

}  // namespace regcd::ag
