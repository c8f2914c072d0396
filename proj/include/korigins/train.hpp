#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "korigins/metrics.hpp"
#include "korigins/network.hpp"
#include "korigins/synthgen.hpp"

namespace korigins {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 3;
  double lr_conv = 1e-3;
  double lr_korigins = 100.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Validation MAcc every N epochs (0: final epoch only). Skipped epochs record NaN.
  std::size_t eval_every = 1;
  /// GEMM precision used during training and evaluation.
  Precision precision = Precision::f32;
};

void validate(const TrainConfig& config);

struct LossResult {
  double loss = 0.0;
  /// d(mean loss)/d(logits) for the fused softmax + cross-entropy.
  Tensor grad_logits;
};

/// Mean over pixels of -log(max(p_true, 1e-12)); gradient (p - onehot) / pixels.
LossResult cross_entropy_loss(const Tensor& probs, std::span<const std::uint8_t> labels);

/// Adam with one learning rate per parameter group. Moment state is keyed
/// by parameter position and persists across steps.
class Adam {
 public:
  explicit Adam(const TrainConfig& config);
  void step(Network& net);
  std::size_t steps() const { return t_; }

 private:
  TrainConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double val_macc = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training; the partial final batch is kept and the order is
/// reshuffled every epoch from (seed, epoch).
TrainHistory train(Network& net, const std::vector<LabeledImage>& train_set, const std::vector<LabeledImage>& val_set,
                   const TrainConfig& config, const EpochCallback& on_epoch = {});

std::vector<std::uint8_t> predict(Network& net, const LabeledImage& image);
ConfusionCounts evaluate_counts(Network& net, const std::vector<LabeledImage>& images);
double evaluate(Network& net, const std::vector<LabeledImage>& images);

}  // namespace korigins
