#include "korigins/layers.hpp"

#include <algorithm>
#include <cmath>

#include "korigins/error.hpp"

namespace korigins {

namespace {

const Tensor& single_input(std::span<const TensorPtr> inputs, const char* layer) {
  if (inputs.size() != 1 || !inputs[0]) {
    throw ShapeError(std::string(layer) + " expects exactly one input");
  }
  return *inputs[0];
}

void require_cache(bool cached, const char* layer) {
  if (!cached) throw ShapeError(std::string(layer) + ": backward called without a forward pass");
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::tconv2d: return "tconv2d";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::relu: return "relu";
    case LayerKind::softmax: return "softmax";
    case LayerKind::concat: return "concat";
    case LayerKind::korigins: return "korigins";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  for (auto kind : {LayerKind::conv2d, LayerKind::tconv2d, LayerKind::maxpool2x2, LayerKind::relu,
                    LayerKind::softmax, LayerKind::concat, LayerKind::korigins}) {
    if (name == to_string(kind)) return kind;
  }
  throw FormatError("unknown layer kind '" + name + "'");
}

// --- K-Origins --------------------------------------------------------------

Tensor korigins_forward(const Tensor& input, std::span<const double> weights) {
  require_rank(input, 3, "korigins input");
  if (weights.empty()) throw ConfigError("korigins: at least one weight is required");
  const std::size_t block = input.size();
  Tensor out({input.dim(0) * (weights.size() + 1), input.dim(1), input.dim(2)});
  std::copy(input.raw(), input.raw() + block, out.raw());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    double* dst = out.raw() + (k + 1) * block;
    const double origin = weights[k];
    for (std::size_t i = 0; i < block; ++i) dst[i] = input[i] - origin;
  }
  return out;
}

KOriginsGradients korigins_backward(const Tensor& upstream, std::size_t weight_count) {
  require_rank(upstream, 3, "korigins upstream");
  if (weight_count == 0) throw ConfigError("korigins: at least one weight is required");
  if (upstream.dim(0) % (weight_count + 1) != 0) {
    throw ShapeError("korigins_backward: " + std::to_string(upstream.dim(0)) +
                     " channels not divisible into " + std::to_string(weight_count + 1) + " blocks");
  }
  const std::size_t channels = upstream.dim(0) / (weight_count + 1);
  KOriginsGradients grads{Tensor({channels, upstream.dim(1), upstream.dim(2)}),
                          std::vector<double>(weight_count, 0.0)};
  const std::size_t block = grads.input.size();
  for (std::size_t b = 0; b <= weight_count; ++b) {
    const double* src = upstream.raw() + b * block;
    double sum = 0.0;
    for (std::size_t i = 0; i < block; ++i) {
      grads.input[i] += src[i];
      sum += src[i];
    }
    if (b > 0) grads.weights[b - 1] = -sum;
  }
  return grads;
}

std::vector<double> korigins_clamp_init(std::span<const ClassSpec> classes) {
  std::vector<double> weights;
  weights.reserve(classes.size() * 2);
  for (const auto& c : classes) {
    weights.push_back(c.mu - 2.0 * c.sigma);
    weights.push_back(c.mu + 2.0 * c.sigma);
  }
  return weights;
}

// --- element / channel ops ---------------------------------------------------

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  if (!input.same_shape(upstream)) {
    throw ShapeError("relu_backward: upstream " + upstream.shape_string() + " vs input " + input.shape_string());
  }
  Tensor grad = upstream;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

Tensor softmax_pixelwise_forward(const Tensor& logits) {
  require_rank(logits, 3, "softmax input");
  const std::size_t c = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  Tensor probs(logits.dims());
  for (std::size_t p = 0; p < plane; ++p) {
    double peak = logits[p];
    for (std::size_t ch = 1; ch < c; ++ch) peak = std::max(peak, logits[ch * plane + p]);
    double total = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double e = std::exp(logits[ch * plane + p] - peak);
      probs[ch * plane + p] = e;
      total += e;
    }
    for (std::size_t ch = 0; ch < c; ++ch) probs[ch * plane + p] /= total;
  }
  return probs;
}

Tensor softmax_pixelwise_backward(const Tensor& probs, const Tensor& upstream) {
  if (!probs.same_shape(upstream)) {
    throw ShapeError("softmax_backward: upstream " + upstream.shape_string() + " vs probs " + probs.shape_string());
  }
  const std::size_t c = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
  Tensor grad(probs.dims());
  for (std::size_t p = 0; p < plane; ++p) {
    double inner = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) inner += probs[ch * plane + p] * upstream[ch * plane + p];
    for (std::size_t ch = 0; ch < c; ++ch) {
      grad[ch * plane + p] = probs[ch * plane + p] * (upstream[ch * plane + p] - inner);
    }
  }
  return grad;
}

Tensor concat_forward(const Tensor& first, const Tensor& second) {
  require_rank(first, 3, "concat input");
  require_rank(second, 3, "concat input");
  if (first.dim(1) != second.dim(1) || first.dim(2) != second.dim(2)) {
    throw ShapeError("concat spatial mismatch: " + first.shape_string() + " vs " + second.shape_string());
  }
  Tensor out({first.dim(0) + second.dim(0), first.dim(1), first.dim(2)});
  std::copy(first.raw(), first.raw() + first.size(), out.raw());
  std::copy(second.raw(), second.raw() + second.size(), out.raw() + first.size());
  return out;
}

std::pair<Tensor, Tensor> concat_backward(const Tensor& upstream, std::size_t first_channels) {
  require_rank(upstream, 3, "concat upstream");
  if (first_channels == 0 || first_channels >= upstream.dim(0)) {
    throw ShapeError("concat_backward: invalid split " + std::to_string(first_channels) + " of " +
                     upstream.shape_string());
  }
  const std::size_t h = upstream.dim(1), w = upstream.dim(2);
  Tensor a({first_channels, h, w}), b({upstream.dim(0) - first_channels, h, w});
  std::copy(upstream.raw(), upstream.raw() + a.size(), a.raw());
  std::copy(upstream.raw() + a.size(), upstream.raw() + upstream.size(), b.raw());
  return {std::move(a), std::move(b)};
}

// --- initialization -------------------------------------------------------------

namespace {

void glorot_fill(Rng& rng, Tensor& t, std::size_t fan_in, std::size_t fan_out, std::size_t k) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in * k * k + fan_out * k * k));
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
}

}  // namespace

ConvParams init_conv_params(Rng& rng, std::size_t fan_in, std::size_t fan_out, std::size_t k) {
  if (fan_in == 0 || fan_out == 0 || k == 0) throw ArgumentError("init_conv_params: dims must be positive");
  ConvParams p{Tensor({fan_out, fan_in, k, k}), std::vector<double>(fan_out, 0.0)};
  glorot_fill(rng, p.kernels, fan_in, fan_out, k);
  return p;
}

ConvParams init_tconv_params(Rng& rng, std::size_t fan_in, std::size_t fan_out, std::size_t k) {
  if (fan_in == 0 || fan_out == 0 || k == 0) throw ArgumentError("init_tconv_params: dims must be positive");
  ConvParams p{Tensor({fan_in, fan_out, k, k}), std::vector<double>(fan_out, 0.0)};
  glorot_fill(rng, p.kernels, fan_in, fan_out, k);
  return p;
}

// --- layer objects -----------------------------------------------------------------

void Layer::zero_grad() {
  for (auto& p : params()) p.grad->fill(0.0);
}

Conv2DLayer::Conv2DLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                         bool use_bias)
    : kernels_({out_channels, in_channels, kernel, kernel}),
      bias_({out_channels}),
      grad_kernels_({out_channels, in_channels, kernel, kernel}),
      grad_bias_({out_channels}),
      use_bias_(use_bias) {}

void Conv2DLayer::initialize(Rng& rng) {
  auto p = init_conv_params(rng, kernels_.dim(1), kernels_.dim(0), kernels_.dim(2));
  kernels_ = std::move(p.kernels);
  bias_.fill(0.0);
}

TensorPtr Conv2DLayer::forward(std::span<const TensorPtr> inputs) {
  single_input(inputs, "conv2d");
  input_ = inputs[0];
  std::span<const double> bias = use_bias_ ? bias_.data() : std::span<const double>{};
  return std::make_shared<Tensor>(conv2d_forward(*input_, kernels_, bias, 1, Padding::same, precision_));
}

std::vector<Tensor> Conv2DLayer::backward(const Tensor& grad_output) {
  require_cache(has_cache(), "conv2d");
  auto g = conv2d_backward(*input_, kernels_, grad_output, 1, Padding::same, precision_);
  grad_kernels_ += g.kernels;
  if (use_bias_) {
    for (std::size_t i = 0; i < g.bias.size(); ++i) grad_bias_[i] += g.bias[i];
  }
  std::vector<Tensor> out;
  out.push_back(std::move(g.input));
  return out;
}

std::vector<ParamRef> Conv2DLayer::params() {
  std::vector<ParamRef> p{{"kernel", &kernels_, &grad_kernels_, ParamGroup::conv}};
  if (use_bias_) p.push_back({"bias", &bias_, &grad_bias_, ParamGroup::conv});
  return p;
}

TConv2DLayer::TConv2DLayer(std::size_t in_channels, std::size_t out_channels)
    : kernels_({in_channels, out_channels, 2, 2}),
      bias_({out_channels}),
      grad_kernels_({in_channels, out_channels, 2, 2}),
      grad_bias_({out_channels}) {}

void TConv2DLayer::initialize(Rng& rng) {
  auto p = init_tconv_params(rng, kernels_.dim(0), kernels_.dim(1), 2);
  kernels_ = std::move(p.kernels);
  bias_.fill(0.0);
}

TensorPtr TConv2DLayer::forward(std::span<const TensorPtr> inputs) {
  single_input(inputs, "tconv2d");
  input_ = inputs[0];
  return std::make_shared<Tensor>(tconv2d_forward(*input_, kernels_, bias_.data(), 2, precision_));
}

std::vector<Tensor> TConv2DLayer::backward(const Tensor& grad_output) {
  require_cache(has_cache(), "tconv2d");
  auto g = tconv2d_backward(*input_, kernels_, grad_output, precision_);
  grad_kernels_ += g.kernels;
  for (std::size_t i = 0; i < g.bias.size(); ++i) grad_bias_[i] += g.bias[i];
  std::vector<Tensor> out;
  out.push_back(std::move(g.input));
  return out;
}

std::vector<ParamRef> TConv2DLayer::params() {
  return {{"kernel", &kernels_, &grad_kernels_, ParamGroup::conv},
          {"bias", &bias_, &grad_bias_, ParamGroup::conv}};
}

TensorPtr MaxPoolLayer::forward(std::span<const TensorPtr> inputs) {
  auto result = maxpool2x2_forward(single_input(inputs, "maxpool2x2"));
  argmax_ = std::move(result.argmax);
  input_dims_ = std::move(result.input_dims);
  cached_ = true;
  return std::make_shared<Tensor>(std::move(result.output));
}

std::vector<Tensor> MaxPoolLayer::backward(const Tensor& grad_output) {
  require_cache(has_cache(), "maxpool2x2");
  std::vector<Tensor> out;
  out.push_back(maxpool2x2_backward(argmax_, input_dims_, grad_output));
  return out;
}

TensorPtr ReLULayer::forward(std::span<const TensorPtr> inputs) {
  output_ = std::make_shared<Tensor>(relu_forward(single_input(inputs, "relu")));
  return output_;
}

std::vector<Tensor> ReLULayer::backward(const Tensor& grad_output) {
  require_cache(has_cache(), "relu");
  std::vector<Tensor> out;
  out.push_back(relu_backward(*output_, grad_output));
  return out;
}

TensorPtr SoftmaxLayer::forward(std::span<const TensorPtr> inputs) {
  output_ = std::make_shared<Tensor>(softmax_pixelwise_forward(single_input(inputs, "softmax")));
  return output_;
}

std::vector<Tensor> SoftmaxLayer::backward(const Tensor& grad_output) {
  require_cache(has_cache(), "softmax");
  std::vector<Tensor> out;
  out.push_back(softmax_pixelwise_backward(*output_, grad_output));
  return out;
}

TensorPtr ConcatLayer::forward(std::span<const TensorPtr> inputs) {
  if (inputs.size() != 2 || !inputs[0] || !inputs[1]) throw ShapeError("concat expects two inputs");
  auto out = std::make_shared<Tensor>(concat_forward(*inputs[0], *inputs[1]));
  first_channels_ = inputs[0]->dim(0);
  return out;
}

std::vector<Tensor> ConcatLayer::backward(const Tensor& grad_output) {
  require_cache(has_cache(), "concat");
  auto [a, b] = concat_backward(grad_output, first_channels_);
  std::vector<Tensor> out;
  out.push_back(std::move(a));
  out.push_back(std::move(b));
  return out;
}

KOriginsLayer::KOriginsLayer(std::size_t weight_count) {
  if (weight_count == 0) throw ConfigError("korigins: at least one weight is required");
  weights_ = Tensor({weight_count});
  grad_weights_ = Tensor({weight_count});
}

TensorPtr KOriginsLayer::forward(std::span<const TensorPtr> inputs) {
  auto out = std::make_shared<Tensor>(korigins_forward(single_input(inputs, "korigins"), weights_.data()));
  cached_ = true;
  return out;
}

std::vector<Tensor> KOriginsLayer::backward(const Tensor& grad_output) {
  require_cache(has_cache(), "korigins");
  auto g = korigins_backward(grad_output, weights_.size());
  for (std::size_t k = 0; k < g.weights.size(); ++k) grad_weights_[k] += g.weights[k];
  std::vector<Tensor> out;
  out.push_back(std::move(g.input));
  return out;
}

std::vector<ParamRef> KOriginsLayer::params() {
  return {{"origins", &weights_, &grad_weights_, ParamGroup::korigins}};
}

}  // namespace korigins
