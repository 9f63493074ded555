#pragma once

#include <cstddef>
#include <vector>

#include "can/graph.hpp"
#include "can/rng.hpp"
#include "can/tensor.hpp"

namespace can {

// Convolution layer parameters. Kernel shape is (C_out, C_in, k, k).
struct ConvLayer {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t in_channels() const { return kernel.dim(1); }
  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t kernel_size() const { return kernel.dim(2); }
  std::size_t parameter_count() const { return kernel.size() + bias.size(); }
};

// Fully connected layer. Weight shape is (out_dim, in_dim).
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

// Fan-in scaled uniform initialization; biases start at zero. Parameters
// are created with requires_grad set.
ConvLayer make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                    std::size_t stride, std::size_t padding, Rng& rng);
DenseLayer make_dense(std::size_t in_dim, std::size_t out_dim, Rng& rng);

// Output extent of a windowed op; throws ConfigError when not integral.
std::size_t window_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t padding);

// NCHW convolution; kernel (C_out, C_in, k, k), bias (C_out).
Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t padding);
Var conv2d(Var input, ConvLayer& layer);

// Gradient at 0 is 0.
Var relu(Var x);

// Windowed maximum; the gradient goes to the first row-major maximum.
Var max_pool2d(Var x, std::size_t kernel, std::size_t stride);

// (N, C, H, W) -> (N, C).
Var global_avg_pool(Var x);

// (N, D) x (K, D)^T + (K) -> (N, K).
Var dense(Var x, Var weight, Var bias);
Var dense(Var x, DenseLayer& layer);

Var sigmoid(Var x);

// Inverted dropout. Identity when !training or rate == 0.
Var dropout(Var x, double rate, bool training, Rng& rng);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Elementwise maximum; ties send the gradient to `a`.
Var maximum(Var a, Var b);
Var scale(Var x, double factor);

// Concatenates 4-D tensors along the channel axis in argument order.
Var concat_channels(const std::vector<Var>& parts);

// (N, C, H, W) -> (N, 1, H, W).
Var sum_channels(Var x);

// Bilinear resize with corner-aligned sampling. Returns `x` itself when the
// extents already match.
Var resize_bilinear(Var x, std::size_t height, std::size_t width);

// Divides each sample (leading axis) by its maximum. Samples whose maximum
// is <= 0 pass through unchanged. The maximum is treated as a selection of
// the first maximal element for the backward pass.
Var normalize_by_max(Var x);

// Euclidean norm over all but the leading axis: (N, ...) -> (N). The
// gradient at a zero vector is taken as 0.
Var l2_norm_per_sample(Var x);

// Scalar reductions, output shape (1).
Var sum(Var x);
Var mean(Var x);

// Tensor-level bilinear resize sharing the graph op's sampling rule,
// for (..., H, W) tensors.
Tensor resize_bilinear(const Tensor& x, std::size_t height, std::size_t width);

}  // namespace can
