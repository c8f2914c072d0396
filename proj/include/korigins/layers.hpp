#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "korigins/class_spec.hpp"
#include "korigins/kernels.hpp"
#include "korigins/rng.hpp"
#include "korigins/tensor.hpp"

namespace korigins {

enum class LayerKind { conv2d, tconv2d, maxpool2x2, relu, softmax, concat, korigins };

/// Learning-rate group a parameter belongs to.
enum class ParamGroup { conv, korigins };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

// ---------------------------------------------------------------------------
// Stateless forward/backward functions.

/// Output channels: the C input channels, then X - w_k for k = 1..K.
Tensor korigins_forward(const Tensor& input, std::span<const double> weights);

struct KOriginsGradients {
  Tensor input;
  std::vector<double> weights;
};

/// `upstream` has C*(K+1) channels where K = weight_count.
KOriginsGradients korigins_backward(const Tensor& upstream, std::size_t weight_count);

/// Clamping initialization: mu_i - 2 sigma_i, mu_i + 2 sigma_i per class.
std::vector<double> korigins_clamp_init(std::span<const ClassSpec> classes);

Tensor relu_forward(const Tensor& input);
/// Gradient gated by input > 0; the subgradient at exactly 0 is 0.
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

/// Softmax over channels at every pixel of a [C,H,W] tensor.
Tensor softmax_pixelwise_forward(const Tensor& logits);
Tensor softmax_pixelwise_backward(const Tensor& probs, const Tensor& upstream);

Tensor concat_forward(const Tensor& first, const Tensor& second);
std::pair<Tensor, Tensor> concat_backward(const Tensor& upstream, std::size_t first_channels);

struct ConvParams {
  Tensor kernels;
  std::vector<double> bias;
};

/// Glorot-uniform kernels [fan_out, fan_in, k, k] with zero biases.
ConvParams init_conv_params(Rng& rng, std::size_t fan_in, std::size_t fan_out, std::size_t k);
/// Same distribution in the transposed layout [fan_in, fan_out, k, k].
ConvParams init_tconv_params(Rng& rng, std::size_t fan_in, std::size_t fan_out, std::size_t k);

// ---------------------------------------------------------------------------
// Layer objects.

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
  ParamGroup group;
};

/// A trainable or fixed layer with a forward cache.
///
/// Backward accumulates into parameter gradients so that a mini-batch can be
/// processed one image at a time; call zero_grad() between optimizer steps.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual TensorPtr forward(std::span<const TensorPtr> inputs) = 0;
  /// Returns one gradient per forward input.
  virtual std::vector<Tensor> backward(const Tensor& grad_output) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  virtual void reset_cache() = 0;
  virtual bool has_cache() const = 0;

  void zero_grad();
  void set_precision(Precision precision) { precision_ = precision; }
  Precision precision() const { return precision_; }

 protected:
  Precision precision_ = Precision::f64;
};

class Conv2DLayer final : public Layer {
 public:
  Conv2DLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, bool use_bias);

  LayerKind kind() const override { return LayerKind::conv2d; }
  TensorPtr forward(std::span<const TensorPtr> inputs) override;
  std::vector<Tensor> backward(const Tensor& grad_output) override;
  std::vector<ParamRef> params() override;
  void reset_cache() override { input_.reset(); }
  bool has_cache() const override { return input_ != nullptr; }

  void initialize(Rng& rng);
  Tensor& kernels() { return kernels_; }
  Tensor& bias() { return bias_; }
  bool use_bias() const { return use_bias_; }

 private:
  Tensor kernels_, bias_, grad_kernels_, grad_bias_;
  bool use_bias_;
  TensorPtr input_;
};

class TConv2DLayer final : public Layer {
 public:
  TConv2DLayer(std::size_t in_channels, std::size_t out_channels);

  LayerKind kind() const override { return LayerKind::tconv2d; }
  TensorPtr forward(std::span<const TensorPtr> inputs) override;
  std::vector<Tensor> backward(const Tensor& grad_output) override;
  std::vector<ParamRef> params() override;
  void reset_cache() override { input_.reset(); }
  bool has_cache() const override { return input_ != nullptr; }

  void initialize(Rng& rng);
  Tensor& kernels() { return kernels_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor kernels_, bias_, grad_kernels_, grad_bias_;
  TensorPtr input_;
};

class MaxPoolLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::maxpool2x2; }
  TensorPtr forward(std::span<const TensorPtr> inputs) override;
  std::vector<Tensor> backward(const Tensor& grad_output) override;
  void reset_cache() override { cached_ = false; argmax_.clear(); }
  bool has_cache() const override { return cached_; }

 private:
  std::vector<std::uint32_t> argmax_;
  std::vector<std::size_t> input_dims_;
  bool cached_ = false;
};

class ReLULayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  TensorPtr forward(std::span<const TensorPtr> inputs) override;
  std::vector<Tensor> backward(const Tensor& grad_output) override;
  void reset_cache() override { output_.reset(); }
  bool has_cache() const override { return output_ != nullptr; }

 private:
  // Gating on the output is equivalent to gating on the input.
  TensorPtr output_;
};

class SoftmaxLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::softmax; }
  TensorPtr forward(std::span<const TensorPtr> inputs) override;
  std::vector<Tensor> backward(const Tensor& grad_output) override;
  void reset_cache() override { output_.reset(); }
  bool has_cache() const override { return output_ != nullptr; }

 private:
  TensorPtr output_;
};

class ConcatLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::concat; }
  TensorPtr forward(std::span<const TensorPtr> inputs) override;
  std::vector<Tensor> backward(const Tensor& grad_output) override;
  void reset_cache() override { first_channels_ = 0; }
  bool has_cache() const override { return first_channels_ != 0; }

 private:
  std::size_t first_channels_ = 0;
};

class KOriginsLayer final : public Layer {
 public:
  explicit KOriginsLayer(std::size_t weight_count);

  LayerKind kind() const override { return LayerKind::korigins; }
  TensorPtr forward(std::span<const TensorPtr> inputs) override;
  std::vector<Tensor> backward(const Tensor& grad_output) override;
  std::vector<ParamRef> params() override;
  void reset_cache() override { cached_ = false; }
  bool has_cache() const override { return cached_; }

  Tensor& weights() { return weights_; }
  std::size_t weight_count() const { return weights_.size(); }

 private:
  Tensor weights_, grad_weights_;
  bool cached_ = false;
};

}  // namespace korigins
