#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "korigins/class_spec.hpp"
#include "korigins/layers.hpp"

namespace korigins {

/// Which part of the encoder-decoder a layer belongs to. Only encoder layers
/// contribute to the receptive field length.
enum class Stage { encoder, decoder, head };

/// Index used in LayerSpec::source for the network input.
constexpr int kNetworkInput = -1;

struct LayerSpec {
  LayerKind kind = LayerKind::conv2d;
  Stage stage = Stage::encoder;
  /// Producer of the primary input (kNetworkInput or an earlier layer index).
  int source = kNetworkInput;
  /// Second input of a concat layer (earlier layer index), otherwise -1.
  int skip = -1;

  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool bias = true;

  /// K-Origins only: number of weights and their initial values. An empty
  /// list means Gaussian initialization with origin_mu / origin_sigma.
  std::size_t weight_count = 0;
  std::vector<double> origin_init;
  double origin_mu = 20000.0;
  double origin_sigma = 5000.0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  std::string name;
  std::string depth_label;  // "II", "III", "IV" or empty
  std::size_t input_channels = 1;
  std::size_t class_count = 2;
  std::vector<LayerSpec> layers;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Checks wiring, channel counts and encoder/decoder symmetry.
/// Throws ConfigError describing the first problem found.
void validate(const NetworkSpec& spec);

/// Receptive field length at the input, walking the encoder backwards from
/// its deepest feature with r = 1 and r_prev = s * r + (k - s).
std::size_t rfl_of_network(const NetworkSpec& spec);

/// Same recursion for an explicit encoder chain of (kernel, stride) pairs.
std::size_t rfl_of_chain(const std::vector<std::pair<std::size_t, std::size_t>>& kernel_stride);

std::size_t param_count(const NetworkSpec& spec);
std::size_t param_count(const LayerSpec& layer);

// --- canonical builders ---------------------------------------------------------

/// RFL8 / RFL18 / RFL38: depth II / III / IV, widths 40 * 2^level.
NetworkSpec build_rfl(std::size_t rfl, std::size_t class_count = 2);

struct KrflOptions {
  std::size_t deep_weight_count = 3;
  bool decoder_korigins = false;
};

/// build_rfl with a K-Origins layer at the input of every encoder level.
/// The top layer is clamp-initialized from `classes` (2 weights per class).
NetworkSpec build_krfl(std::size_t rfl, std::size_t class_count, const std::vector<ClassSpec>& classes,
                       const KrflOptions& options = {});

struct Rfl14Widths {
  std::size_t level1 = 40;
  /// Second level-1 conv width for the plain network (feeds level 2 directly).
  std::size_t level1_plain_out = 200;
  std::size_t bottleneck = 80;
  std::size_t decoder = 40;
  /// Weights of the K-Origins layer closing level 1 in the K variant.
  std::size_t deep_weight_count = 4;
  /// Width of the extra level used by the 32-pixel variants.
  std::size_t level3 = 160;
};

/// Depth II with two 3x3 convs per level (RFL 14). With K-Origins the
/// input layer is clamp-initialized from `classes`; without K-Origins the
/// class list is ignored.
NetworkSpec build_rfl14_family(std::size_t class_count, bool with_korigins,
                               const std::vector<ClassSpec>& classes = {}, const Rfl14Widths& widths = {});

/// RFL32 / KRFL32: the RFL14 family with one more level (RFL 32).
NetworkSpec build_rfl32_family(std::size_t class_count, bool with_korigins,
                               const std::vector<ClassSpec>& classes = {}, const Rfl14Widths& widths = {});

/// Input -> K-Origins -> bias-free 1x1 conv -> pixelwise softmax.
NetworkSpec build_colour_net(std::size_t weight_count = 1, std::size_t class_count = 2,
                             const std::vector<double>& initial_origins = {});

/// Builds a network by CLI name (rfl8, krfl18, rfl14, colour, ...).
NetworkSpec build_named(const std::string& name, std::size_t class_count,
                        const std::vector<ClassSpec>& classes = {});

/// Names accepted by build_named.
const std::vector<std::string>& network_names();

struct ReferenceCount {
  std::string network;
  std::size_t class_count;
  std::size_t reported;
};

/// Parameter counts listed for each architecture in the reference table.
const std::vector<ReferenceCount>& reference_param_counts();

// --- serialization ----------------------------------------------------------------

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);
void save_network_spec(const NetworkSpec& spec, const std::string& path);
NetworkSpec load_network_spec(const std::string& path);

}  // namespace korigins
