#include "korigins/train.hpp"

#include <cmath>
#include <mutex>
#include <numeric>

#include "korigins/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace korigins {

namespace {

// Sets FTZ and DAZ for the enclosing scope.
class FlushSubnormals {
 public:
#if defined(__SSE__)
  FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushSubnormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

// Activation buffers are reused across steps rather than remapped.
void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 512 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  });
#endif
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.lr_conv >= 0.0) || !(c.lr_korigins >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0) || !(c.epsilon > 0.0)) {
    throw ConfigError("invalid Adam constants");
  }
}

LossResult cross_entropy_loss(const Tensor& probs, std::span<const std::uint8_t> labels) {
  require_rank(probs, 3, "cross_entropy probs");
  const std::size_t c = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
  if (labels.size() != plane) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + probs.shape_string());
  }
  LossResult r{0.0, probs};
  const double scale = 1.0 / static_cast<double>(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    const std::size_t t = labels[p];
    if (t >= c) throw ArgumentError("cross_entropy: label " + std::to_string(t) + " >= class count");
    r.loss -= std::log(std::max(probs[t * plane + p], 1e-12));
    r.grad_logits[t * plane + p] -= 1.0;
  }
  for (auto& g : r.grad_logits.data()) g *= scale;
  r.loss *= scale;
  return r;
}

Adam::Adam(const TrainConfig& config) : config_(config) {}

void Adam::step(Network& net) {
  auto params = net.params();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value->size(), 0.0);
      v_.emplace_back(p.value->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ConfigError("Adam: parameter layout changed between steps");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double lr = params[i].group == ParamGroup::korigins ? config_.lr_korigins : config_.lr_conv;
    auto& m = m_[i];
    auto& v = v_[i];
    Tensor& value = *params[i].value;
    const Tensor& grad = *params[i].grad;
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      if (lr == 0.0) continue;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      value[k] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

std::vector<std::uint8_t> predict(Network& net, const LabeledImage& image) {
  FlushSubnormals ftz;
  const Tensor probs = net.forward(image_tensor(image));
  net.reset_cache();
  return argmax_labels(probs);
}

ConfusionCounts evaluate_counts(Network& net, const std::vector<LabeledImage>& images) {
  ConfusionCounts counts(net.class_count());
  for (const auto& img : images) accumulate_confusion(counts, predict(net, img), img.labels);
  return counts;
}

double evaluate(Network& net, const std::vector<LabeledImage>& images) { return macc(evaluate_counts(net, images)); }

TrainHistory train(Network& net, const std::vector<LabeledImage>& train_set, const std::vector<LabeledImage>& val_set,
                   const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  if (train_set.empty()) throw ConfigError("training set is empty");
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& img : *set) {
      for (auto l : img.labels) {
        if (l >= net.class_count()) {
          throw ConfigError("dataset label " + std::to_string(l) + " does not fit " + net.spec().name + " with " +
                            std::to_string(net.class_count()) + " classes");
        }
      }
    }
  }
  tune_allocator();
  FlushSubnormals ftz;
  net.set_precision(config.precision);
  Adam optimizer(config);
  TrainHistory history;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) {
      Rng rng(config.seed, 0x5348554646ULL + epoch);
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);
      }
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double batch_scale = 1.0 / static_cast<double>(end - start);
      net.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const LabeledImage& img = train_set[order[b]];
        const Tensor probs = net.forward(image_tensor(img));
        LossResult lr = cross_entropy_loss(probs, img.labels);
        loss_sum += lr.loss;
        for (auto& g : lr.grad_logits.data()) g *= batch_scale;
        net.backward_from_logits(lr.grad_logits);
        net.reset_cache();
      }
      optimizer.step(net);
      ++history.steps;
    }
    const bool last = epoch + 1 == config.epochs;
    const bool due = last || (config.eval_every != 0 && (epoch + 1) % config.eval_every == 0);
    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(order.size()),
                    val_set.empty() || !due ? std::nan("") : evaluate(net, val_set)};
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

}  // namespace korigins
