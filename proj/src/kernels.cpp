#include "korigins/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <string>

#include "korigins/error.hpp"

namespace korigins {

namespace {

// Upper bound on im2col band size (elements). Bands keep the column buffer
// in cache-friendly chunks for 200x200 inputs with hundreds of channels.
constexpr std::size_t kBandElements = std::size_t{1} << 17;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstView = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

// Row-major C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  const auto rows = [](std::size_t r) { return static_cast<Eigen::Index>(r); };
  Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>> out(c, rows(m), rows(n), Eigen::OuterStride<>(rows(ldc)));
  const ConstView<T> av(a, rows(trans_a ? k : m), rows(trans_a ? m : k), Eigen::OuterStride<>(rows(lda)));
  const ConstView<T> bv(b, rows(trans_b ? n : k), rows(trans_b ? k : n), Eigen::OuterStride<>(rows(ldb)));
  if (beta == T(0)) {
    out.setZero();
  } else if (beta != T(1)) {
    out *= beta;
  }
  if (trans_a && trans_b) {
    out.noalias() += alpha * av.transpose() * bv.transpose();
  } else if (trans_a) {
    out.noalias() += alpha * av.transpose() * bv;
  } else if (trans_b) {
    out.noalias() += alpha * av * bv.transpose();
  } else {
    out.noalias() += alpha * av * bv;
  }
}

template <typename T>
std::vector<T> to_vector(std::span<const double> src) {
  return std::vector<T>(src.begin(), src.end());
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t out_channels, kernel, stride;
  std::size_t pad_top, pad_left;
  std::size_t out_height, out_width;

  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t out_plane() const { return out_height * out_width; }
  bool pointwise() const { return kernel == 1 && stride == 1 && pad_top == 0 && pad_left == 0; }
};

std::size_t same_pad_total(std::size_t in, std::size_t k, std::size_t stride) {
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out - 1) * stride + k;
  return needed > in ? needed - in : 0;
}

ConvGeometry make_geometry(const Tensor& input, const Tensor& kernels, std::size_t stride,
                           Padding padding) {
  require_rank(input, 3, "conv2d input");
  if (kernels.rank() != 4) throw ShapeError("conv2d kernels must be rank 4, got " + kernels.shape_string());
  if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
  const auto& kd = kernels.dims();
  if (kd[2] != kd[3]) throw ShapeError("conv2d kernels must be square, got " + kernels.shape_string());
  if (kd[1] != input.dim(0)) {
    throw ShapeError("conv2d channel mismatch: input " + input.shape_string() + " vs kernels " +
                     kernels.shape_string());
  }
  ConvGeometry g{};
  g.channels = input.dim(0);
  g.height = input.dim(1);
  g.width = input.dim(2);
  g.out_channels = kd[0];
  g.kernel = kd[2];
  g.stride = stride;
  g.out_height = conv_output_extent(g.height, g.kernel, stride, padding);
  g.out_width = conv_output_extent(g.width, g.kernel, stride, padding);
  if (padding == Padding::same) {
    g.pad_top = same_pad_total(g.height, g.kernel, stride) / 2;
    g.pad_left = same_pad_total(g.width, g.kernel, stride) / 2;
  }
  return g;
}

std::size_t band_rows(const ConvGeometry& g) {
  const std::size_t per_row = g.patch() * g.out_width;
  return std::clamp<std::size_t>(kBandElements / std::max<std::size_t>(per_row, 1), 1, g.out_height);
}

// Valid output columns [lo, hi) for kernel column kx: 0 <= ox*stride + kx - pad_left < width.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  const long pad = static_cast<long>(g.pad_left), s = static_cast<long>(g.stride);
  const long first = pad - static_cast<long>(kx);
  const long lo = first <= 0 ? 0 : (first + s - 1) / s;
  const long last = static_cast<long>(g.width) - 1 + pad - static_cast<long>(kx);
  const long hi = last < 0 ? 0 : std::min<long>(last / s + 1, static_cast<long>(g.out_width));
  return {static_cast<std::size_t>(std::min<long>(lo, hi)), static_cast<std::size_t>(hi)};
}

// Column buffer for output rows [row0, row0 + rows): cols[patch, rows * out_width].
template <typename T>
void im2col_band(const ConvGeometry& g, const double* input, std::size_t row0, std::size_t rows,
                 T* cols) {
  const std::size_t n = rows * g.out_width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = input + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = cols + ((c * g.kernel + ky) * g.kernel + kx) * n;
        const auto [lo, hi] = valid_columns(g, kx);
        const long shift = static_cast<long>(kx) - static_cast<long>(g.pad_left);
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ky) - static_cast<long>(g.pad_top);
          T* out_row = dst + r * g.out_width;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(out_row, out_row + g.out_width, T(0));
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.width;
          std::fill(out_row, out_row + lo, T(0));
          if (g.stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) out_row[ox] = static_cast<T>(src[static_cast<long>(ox) + shift]);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) out_row[ox] = static_cast<T>(src[static_cast<long>(ox * g.stride) + shift]);
          }
          std::fill(out_row + hi, out_row + g.out_width, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_band(const ConvGeometry& g, const T* cols, std::size_t row0, std::size_t rows,
                 double* grad_input) {
  const std::size_t n = rows * g.out_width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = grad_input + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* src = cols + ((c * g.kernel + ky) * g.kernel + kx) * n;
        const auto [lo, hi] = valid_columns(g, kx);
        const long shift = static_cast<long>(kx) - static_cast<long>(g.pad_left);
        for (std::size_t r = 0; r < rows; ++r) {
          const long iy = static_cast<long>((row0 + r) * g.stride + ky) - static_cast<long>(g.pad_top);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.width;
          const T* in_row = src + r * g.out_width;
          if (g.stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<long>(ox) + shift] += static_cast<double>(in_row[ox]);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) {
              dst[static_cast<long>(ox * g.stride) + shift] += static_cast<double>(in_row[ox]);
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor conv_forward_impl(const ConvGeometry& g, const Tensor& input, const Tensor& kernels,
                         std::span<const double> bias) {
  Tensor out({g.out_channels, g.out_height, g.out_width});
  const std::size_t plane = g.out_plane();
  const auto weights = to_vector<T>(kernels.data());

  if (g.pointwise()) {
    const auto in = to_vector<T>(input.data());
    std::vector<T> result(g.out_channels * plane);
    gemm(false, false, g.out_channels, plane, g.channels, T(1), weights.data(), g.channels, in.data(),
         plane, T(0), result.data(), plane);
    std::copy(result.begin(), result.end(), out.raw());
  } else {
    const std::size_t rows_per_band = band_rows(g);
    std::vector<T> cols(g.patch() * rows_per_band * g.out_width);
    std::vector<T> result(g.out_channels * rows_per_band * g.out_width);
    for (std::size_t row0 = 0; row0 < g.out_height; row0 += rows_per_band) {
      const std::size_t rows = std::min(rows_per_band, g.out_height - row0);
      const std::size_t n = rows * g.out_width;
      im2col_band(g, input.raw(), row0, rows, cols.data());
      gemm(false, false, g.out_channels, n, g.patch(), T(1), weights.data(), g.patch(), cols.data(), n,
           T(0), result.data(), n);
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        std::copy(result.begin() + co * n, result.begin() + (co + 1) * n,
                  out.raw() + co * plane + row0 * g.out_width);
      }
    }
  }
  if (!bias.empty()) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      double* dst = out.raw() + co * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] += bias[co];
    }
  }
  return out;
}

template <typename T>
ConvGradients conv_backward_impl(const ConvGeometry& g, const Tensor& input, const Tensor& kernels,
                                 const Tensor& upstream) {
  ConvGradients grads{Tensor::zeros_like(input), Tensor::zeros_like(kernels),
                      std::vector<double>(g.out_channels, 0.0)};
  const std::size_t plane = g.out_plane();
  for (std::size_t co = 0; co < g.out_channels; ++co) {
    const double* src = upstream.raw() + co * plane;
    double sum = 0.0;
    for (std::size_t p = 0; p < plane; ++p) sum += src[p];
    grads.bias[co] = sum;
  }

  const auto weights = to_vector<T>(kernels.data());
  std::vector<T> grad_weights(weights.size(), T(0));

  if (g.pointwise()) {
    const auto in = to_vector<T>(input.data());
    const auto up = to_vector<T>(upstream.data());
    std::vector<T> grad_in(in.size());
    gemm(false, true, g.out_channels, g.channels, plane, T(1), up.data(), plane, in.data(), plane, T(0),
         grad_weights.data(), g.channels);
    gemm(true, false, g.channels, plane, g.out_channels, T(1), weights.data(), g.channels, up.data(),
         plane, T(0), grad_in.data(), plane);
    std::copy(grad_in.begin(), grad_in.end(), grads.input.raw());
  } else {
    const std::size_t rows_per_band = band_rows(g);
    std::vector<T> cols(g.patch() * rows_per_band * g.out_width);
    std::vector<T> up_band(g.out_channels * rows_per_band * g.out_width);
    for (std::size_t row0 = 0; row0 < g.out_height; row0 += rows_per_band) {
      const std::size_t rows = std::min(rows_per_band, g.out_height - row0);
      const std::size_t n = rows * g.out_width;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const double* src = upstream.raw() + co * plane + row0 * g.out_width;
        std::copy(src, src + n, up_band.begin() + co * n);
      }
      im2col_band(g, input.raw(), row0, rows, cols.data());
      gemm(false, true, g.out_channels, g.patch(), n, T(1), up_band.data(), n, cols.data(), n, T(1),
           grad_weights.data(), g.patch());
      // Reuse the column buffer for the input gradient of this band.
      gemm(true, false, g.patch(), n, g.out_channels, T(1), weights.data(), g.patch(), up_band.data(), n,
           T(0), cols.data(), n);
      col2im_band(g, cols.data(), row0, rows, grads.input.raw());
    }
  }
  std::copy(grad_weights.begin(), grad_weights.end(), grads.kernels.raw());
  return grads;
}

void check_tconv(const Tensor& input, const Tensor& kernels, std::size_t stride) {
  require_rank(input, 3, "tconv2d input");
  if (kernels.rank() != 4) throw ShapeError("tconv2d kernels must be rank 4, got " + kernels.shape_string());
  if (stride != 2 || kernels.dim(2) != 2 || kernels.dim(3) != 2) {
    throw ConfigError("tconv2d supports only 2x2 kernels with stride 2");
  }
  if (kernels.dim(0) != input.dim(0)) {
    throw ShapeError("tconv2d channel mismatch: input " + input.shape_string() + " vs kernels " +
                     kernels.shape_string());
  }
}

template <typename T>
Tensor tconv_forward_impl(const Tensor& input, const Tensor& kernels, std::span<const double> bias) {
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(1);
  const std::size_t hw = h * w;
  const auto in = to_vector<T>(input.data());
  const auto weights = to_vector<T>(kernels.data());
  // cols[(co, a, b), hw] = K^T x X
  std::vector<T> cols(cout * 4 * hw);
  gemm(true, false, cout * 4, hw, cin, T(1), weights.data(), cout * 4, in.data(), hw, T(0), cols.data(), hw);

  Tensor out({cout, 2 * h, 2 * w});
  for (std::size_t co = 0; co < cout; ++co) {
    const double b = bias.empty() ? 0.0 : bias[co];
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t bx = 0; bx < 2; ++bx) {
        const T* src = cols.data() + ((co * 2 + a) * 2 + bx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          double* dst = out.raw() + (co * 2 * h + 2 * y + a) * 2 * w + bx;
          for (std::size_t x = 0; x < w; ++x) dst[2 * x] = static_cast<double>(src[y * w + x]) + b;
        }
      }
    }
  }
  return out;
}

template <typename T>
TConvGradients tconv_backward_impl(const Tensor& input, const Tensor& kernels, const Tensor& upstream) {
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(1);
  const std::size_t hw = h * w;
  TConvGradients grads{Tensor::zeros_like(input), Tensor::zeros_like(kernels),
                       std::vector<double>(cout, 0.0)};

  std::vector<T> gcols(cout * 4 * hw);
  for (std::size_t co = 0; co < cout; ++co) {
    double bsum = 0.0;
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t bx = 0; bx < 2; ++bx) {
        T* dst = gcols.data() + ((co * 2 + a) * 2 + bx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const double* src = upstream.raw() + (co * 2 * h + 2 * y + a) * 2 * w + bx;
          for (std::size_t x = 0; x < w; ++x) {
            dst[y * w + x] = static_cast<T>(src[2 * x]);
            bsum += src[2 * x];
          }
        }
      }
    }
    grads.bias[co] = bsum;
  }
  const auto in = to_vector<T>(input.data());
  const auto weights = to_vector<T>(kernels.data());
  std::vector<T> grad_in(cin * hw);
  std::vector<T> grad_w(cin * cout * 4);
  gemm(false, false, cin, hw, cout * 4, T(1), weights.data(), cout * 4, gcols.data(), hw, T(0),
       grad_in.data(), hw);
  gemm(false, true, cin, cout * 4, hw, T(1), in.data(), hw, gcols.data(), hw, T(0), grad_w.data(), cout * 4);
  std::copy(grad_in.begin(), grad_in.end(), grads.input.raw());
  std::copy(grad_w.begin(), grad_w.end(), grads.kernels.raw());
  return grads;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (kernel == 0 || stride == 0) throw ShapeError("kernel size and stride must be >= 1");
  const std::size_t pad_total = padding == Padding::same ? same_pad_total(in, kernel, stride) : 0;
  if (in + pad_total < kernel) {
    throw ShapeError("convolution output would be empty (input " + std::to_string(in) + ", kernel " +
                     std::to_string(kernel) + ")");
  }
  return (in + pad_total - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, std::span<const double> bias,
                      std::size_t stride, Padding padding, Precision precision) {
  const ConvGeometry g = make_geometry(input, kernels, stride, padding);
  if (!bias.empty() && bias.size() != g.out_channels) {
    throw ShapeError("conv2d bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(g.out_channels));
  }
  return precision == Precision::f32 ? conv_forward_impl<float>(g, input, kernels, bias)
                                     : conv_forward_impl<double>(g, input, kernels, bias);
}

ConvGradients conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream,
                              std::size_t stride, Padding padding, Precision precision) {
  const ConvGeometry g = make_geometry(input, kernels, stride, padding);
  const std::vector<std::size_t> expected{g.out_channels, g.out_height, g.out_width};
  if (upstream.dims() != expected) {
    throw ShapeError("conv2d_backward: upstream " + upstream.shape_string() +
                     " does not match forward output shape");
  }
  return precision == Precision::f32 ? conv_backward_impl<float>(g, input, kernels, upstream)
                                     : conv_backward_impl<double>(g, input, kernels, upstream);
}

PoolResult maxpool2x2_forward(const Tensor& input) {
  require_rank(input, 3, "maxpool2x2 input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2 needs even spatial dims, got " + input.shape_string());
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult result{Tensor({c, oh, ow}), std::vector<std::uint32_t>(c * oh * ow), input.dims()};
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        const std::size_t base = (ch * h + 2 * y) * w + 2 * x;
        // Scan order is increasing flat index; strict '>' keeps the first maximum.
        const std::size_t window[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = window[0];
        for (int i = 1; i < 4; ++i) {
          if (input[window[i]] > input[best]) best = window[i];
        }
        result.output[o] = input[best];
        result.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

Tensor maxpool2x2_backward(std::span<const std::uint32_t> argmax, const std::vector<std::size_t>& input_dims,
                           const Tensor& upstream) {
  if (upstream.size() != argmax.size() || input_dims.size() != 3 || upstream.rank() != 3 ||
      upstream.dim(0) != input_dims[0] || upstream.dim(1) * 2 != input_dims[1] ||
      upstream.dim(2) * 2 != input_dims[2]) {
    throw ShapeError("maxpool2x2_backward: upstream " + upstream.shape_string() +
                     " inconsistent with forward call");
  }
  Tensor grad(input_dims);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += upstream[i];
  return grad;
}

Tensor maxpool2x2_backward(const PoolResult& forward, const Tensor& upstream) {
  return maxpool2x2_backward(forward.argmax, forward.input_dims, upstream);
}

Tensor tconv2d_forward(const Tensor& input, const Tensor& kernels, std::span<const double> bias,
                       std::size_t stride, Precision precision) {
  check_tconv(input, kernels, stride);
  if (!bias.empty() && bias.size() != kernels.dim(1)) throw ShapeError("tconv2d bias length mismatch");
  return precision == Precision::f32 ? tconv_forward_impl<float>(input, kernels, bias)
                                     : tconv_forward_impl<double>(input, kernels, bias);
}

TConvGradients tconv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& upstream,
                                Precision precision) {
  check_tconv(input, kernels, 2);
  const std::vector<std::size_t> expected{kernels.dim(1), input.dim(1) * 2, input.dim(2) * 2};
  if (upstream.dims() != expected) {
    throw ShapeError("tconv2d_backward: upstream " + upstream.shape_string() +
                     " does not match forward output shape");
  }
  return precision == Precision::f32 ? tconv_backward_impl<float>(input, kernels, upstream)
                                     : tconv_backward_impl<double>(input, kernels, upstream);
}

}  // namespace korigins
