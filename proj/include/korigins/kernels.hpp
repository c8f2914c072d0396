#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "korigins/tensor.hpp"

namespace korigins {

enum class Padding { same, valid };

/// Arithmetic used inside the matrix products of the convolution kernels.
/// Storage stays 64-bit either way; f32 only narrows the GEMM operands.
enum class Precision { f64, f32 };

struct ConvGradients {
  Tensor input;
  Tensor kernels;
  std::vector<double> bias;
};

/// Cross-correlation of input[C_in,H,W] with kernels[C_out,C_in,k,k] plus bias.
/// An empty bias span means no bias term. "same" padding puts the extra
/// row/column of zeros at the bottom/right.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, std::span<const double> bias,
                      std::size_t stride, Padding padding, Precision precision = Precision::f64);

ConvGradients conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream,
                              std::size_t stride, Padding padding,
                              Precision precision = Precision::f64);

/// Output spatial extent for one axis; throws ShapeError when it would be zero.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               Padding padding);

struct PoolResult {
  Tensor output;
  /// Flat index into the input of each output's winning element.
  std::vector<std::uint32_t> argmax;
  std::vector<std::size_t> input_dims;
};

/// 2x2 stride-2 max pooling; ties go to the smallest flat index.
PoolResult maxpool2x2_forward(const Tensor& input);
Tensor maxpool2x2_backward(const PoolResult& forward, const Tensor& upstream);
Tensor maxpool2x2_backward(std::span<const std::uint32_t> argmax,
                           const std::vector<std::size_t>& input_dims, const Tensor& upstream);

struct TConvGradients {
  Tensor input;
  Tensor kernels;
  std::vector<double> bias;
};

/// 2x2 stride-2 transposed convolution. kernels[C_in,C_out,2,2]; output
/// spatial dims are exactly doubled. Other kernel/stride choices are a
/// ConfigError.
Tensor tconv2d_forward(const Tensor& input, const Tensor& kernels, std::span<const double> bias,
                       std::size_t stride = 2, Precision precision = Precision::f64);

TConvGradients tconv2d_backward(const Tensor& input, const Tensor& kernels,
                                const Tensor& upstream, Precision precision = Precision::f64);

}  // namespace korigins
