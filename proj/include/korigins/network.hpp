#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "korigins/layers.hpp"
#include "korigins/netbuild.hpp"

namespace korigins {

struct NamedParam {
  std::string name;  // e.g. "03.conv2d.kernel"
  Tensor* value;
  Tensor* grad;
  ParamGroup group;
};

/// Runnable network instantiated from a NetworkSpec.
///
/// Processes one [C,H,W] image per call. Backward accumulates parameter
/// gradients until zero_grad().
class Network {
 public:
  /// Initializes convolutions with Glorot-uniform draws from `rng` and
  /// K-Origins weights from their spec (clamp values or Gaussian draws).
  Network(NetworkSpec spec, Rng& rng);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  std::size_t class_count() const { return spec_.class_count; }

  /// Returns per-pixel class probabilities [class_count, H, W].
  Tensor forward(const Tensor& input);
  /// Backward from dLoss/dProbabilities.
  void backward(const Tensor& grad_probs);
  /// Backward from dLoss/dLogits, skipping the softmax Jacobian (used with
  /// the fused softmax + cross-entropy gradient).
  void backward_from_logits(const Tensor& grad_logits);

  std::vector<NamedParam> params();
  std::size_t param_count();
  void zero_grad();
  void reset_cache();
  void set_precision(Precision precision);

  Layer& layer(std::size_t index) { return *layers_.at(index); }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  void backward_from(std::size_t start, Tensor grad);

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<int> last_use_;
};

// --- checkpoints ---------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'K', 'O', 'R', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

/// Binary layout (little-endian): "KORG", u32 version, then per parameter
/// u16 name length, UTF-8 name, u8 rank, u32 dims, f32 payload.
void save_checkpoint(Network& net, const std::string& path);
std::vector<CheckpointRecord> read_checkpoint(const std::string& path);
/// Builds `spec` and fills it from the file; every record must match the
/// spec's parameter names and shapes in order. Throws FormatError naming the
/// offending record.
Network load_checkpoint(const std::string& path, const NetworkSpec& spec);

}  // namespace korigins
