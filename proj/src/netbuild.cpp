#include "korigins/netbuild.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "korigins/error.hpp"

namespace korigins {

namespace {

struct NodeShape {
  std::size_t channels;
  int scale;  // number of 2x downsamplings relative to the input
};

std::string where(const NetworkSpec& spec, std::size_t i) {
  return spec.name + " layer " + std::to_string(i) + " (" + to_string(spec.layers[i].kind) + ")";
}

std::vector<NodeShape> infer_shapes(const NetworkSpec& spec) {
  std::vector<NodeShape> shapes;
  shapes.reserve(spec.layers.size());
  auto shape_of = [&](int index) -> NodeShape {
    return index == kNetworkInput ? NodeShape{spec.input_channels, 0} : shapes[static_cast<std::size_t>(index)];
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.source < kNetworkInput || l.source >= static_cast<int>(i)) {
      throw ConfigError(where(spec, i) + ": source index " + std::to_string(l.source) + " is not an earlier layer");
    }
    const NodeShape in = shape_of(l.source);
    NodeShape out = in;
    switch (l.kind) {
      case LayerKind::conv2d:
        if (l.in_channels != in.channels) {
          throw ConfigError(where(spec, i) + ": declares " + std::to_string(l.in_channels) + " input channels, receives " +
                            std::to_string(in.channels));
        }
        if (l.out_channels == 0 || l.kernel == 0 || l.stride != 1) {
          throw ConfigError(where(spec, i) + ": needs positive filters/kernel and stride 1");
        }
        out.channels = l.out_channels;
        break;
      case LayerKind::tconv2d:
        if (l.in_channels != in.channels || l.out_channels == 0) {
          throw ConfigError(where(spec, i) + ": channel mismatch");
        }
        if (l.kernel != 2 || l.stride != 2) throw ConfigError(where(spec, i) + ": only 2x2 stride-2 is supported");
        out.channels = l.out_channels;
        out.scale = in.scale - 1;
        break;
      case LayerKind::maxpool2x2:
        if (l.kernel != 2 || l.stride != 2) throw ConfigError(where(spec, i) + ": pooling must be 2x2 stride 2");
        out.scale = in.scale + 1;
        break;
      case LayerKind::relu:
      case LayerKind::softmax:
        break;
      case LayerKind::concat: {
        if (l.skip < 0 || l.skip >= static_cast<int>(i)) {
          throw ConfigError(where(spec, i) + ": skip index " + std::to_string(l.skip) + " is not an earlier layer");
        }
        const NodeShape other = shapes[static_cast<std::size_t>(l.skip)];
        if (other.scale != in.scale) throw ConfigError(where(spec, i) + ": skip source has different spatial size");
        out.channels = in.channels + other.channels;
        break;
      }
      case LayerKind::korigins:
        if (l.weight_count == 0) throw ConfigError(where(spec, i) + ": K-Origins needs at least one weight");
        if (!l.origin_init.empty() && l.origin_init.size() != l.weight_count) {
          throw ConfigError(where(spec, i) + ": origin_init has " + std::to_string(l.origin_init.size()) +
                            " values for " + std::to_string(l.weight_count) + " weights");
        }
        out.channels = in.channels * (l.weight_count + 1);
        break;
    }
    if (out.scale < 0) throw ConfigError(where(spec, i) + ": upsampling above input resolution");
    shapes.push_back(out);
  }
  return shapes;
}

// Minimal sequential builder used by the canonical architectures.
class Builder {
 public:
  Builder(std::string name, std::string depth, std::size_t classes) {
    spec_.name = std::move(name);
    spec_.depth_label = std::move(depth);
    spec_.class_count = classes;
    channels_ = spec_.input_channels;
  }

  int last() const { return last_; }
  std::size_t channels() const { return channels_; }
  std::size_t channels_of(int index) const { return index_channels_.at(index); }

  int conv(std::size_t filters, std::size_t k, Stage stage, bool bias = true) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.kernel = k;
    l.in_channels = channels_;
    l.out_channels = filters;
    l.bias = bias;
    return push(l, stage, filters);
  }
  int conv_relu(std::size_t filters, Stage stage) {
    conv(filters, 3, stage);
    return simple(LayerKind::relu, stage);
  }
  int pool() {
    LayerSpec l;
    l.kind = LayerKind::maxpool2x2;
    l.kernel = 2;
    l.stride = 2;
    return push(l, Stage::encoder, channels_);
  }
  int tconv(std::size_t filters) {
    LayerSpec l;
    l.kind = LayerKind::tconv2d;
    l.kernel = 2;
    l.stride = 2;
    l.in_channels = channels_;
    l.out_channels = filters;
    return push(l, Stage::decoder, filters);
  }
  int concat(int skip) {
    LayerSpec l;
    l.kind = LayerKind::concat;
    l.skip = skip;
    return push(l, Stage::decoder, channels_ + channels_of(skip));
  }
  int korigins(std::size_t weights, Stage stage, std::vector<double> init = {}) {
    LayerSpec l;
    l.kind = LayerKind::korigins;
    l.weight_count = weights;
    l.origin_init = std::move(init);
    return push(l, stage, channels_ * (weights + 1));
  }
  int simple(LayerKind kind, Stage stage) {
    LayerSpec l;
    l.kind = kind;
    return push(l, stage, channels_);
  }
  NetworkSpec finish() {
    conv(spec_.class_count, 1, Stage::head);
    simple(LayerKind::softmax, Stage::head);
    validate(spec_);
    return std::move(spec_);
  }
  NetworkSpec finish_raw() {
    validate(spec_);
    return std::move(spec_);
  }

 private:
  int push(LayerSpec l, Stage stage, std::size_t out_channels) {
    l.stage = stage;
    l.source = last_;
    spec_.layers.push_back(std::move(l));
    last_ = static_cast<int>(spec_.layers.size()) - 1;
    channels_ = out_channels;
    index_channels_[last_] = out_channels;
    return last_;
  }

  NetworkSpec spec_;
  int last_ = kNetworkInput;
  std::size_t channels_;
  std::map<int, std::size_t> index_channels_;
};

std::size_t depth_for_rfl(std::size_t rfl) {
  switch (rfl) {
    case 8: return 2;
    case 18: return 3;
    case 38: return 4;
    default: throw ConfigError("unsupported RFL " + std::to_string(rfl) + " (expected 8, 18 or 38)");
  }
}

const char* depth_label(std::size_t levels) {
  static const char* labels[] = {"", "I", "II", "III", "IV", "V"};
  return levels < 6 ? labels[levels] : "";
}

NetworkSpec build_level_net(std::size_t rfl, std::size_t class_count, const std::vector<ClassSpec>* classes,
                            const KrflOptions& options) {
  const std::size_t depth = depth_for_rfl(rfl);
  const bool with_ko = classes != nullptr;
  if (class_count < 2) throw ConfigError("class_count must be >= 2");
  Builder b((with_ko ? "KRFL" : "RFL") + std::to_string(rfl), depth_label(depth), class_count);

  std::vector<int> skips;
  std::vector<std::size_t> widths;
  for (std::size_t level = 0; level < depth; ++level) {
    const std::size_t width = std::size_t{40} << level;
    widths.push_back(width);
    if (level > 0) b.pool();
    if (with_ko) {
      if (level == 0) {
        b.korigins(2 * class_count, Stage::encoder, korigins_clamp_init(*classes));
      } else {
        b.korigins(options.deep_weight_count, Stage::encoder);
      }
    }
    skips.push_back(b.conv_relu(width, Stage::encoder));
  }
  for (std::size_t level = depth - 1; level-- > 0;) {
    b.tconv(widths[level]);
    b.concat(skips[level]);
    if (with_ko && options.decoder_korigins) b.korigins(options.deep_weight_count, Stage::decoder);
    b.conv_relu(widths[level], Stage::decoder);
  }
  return b.finish();
}

void require_classes(const std::vector<ClassSpec>& classes, std::size_t class_count) {
  if (classes.size() != class_count) {
    throw ConfigError("K-Origins clamp initialization needs " + std::to_string(class_count) +
                      " class specs, got " + std::to_string(classes.size()));
  }
}

NetworkSpec build_rfl14_like(std::size_t class_count, bool with_korigins, const std::vector<ClassSpec>& classes,
                             const Rfl14Widths& w, bool extra_level) {
  if (class_count != 2 && class_count != 3) {
    throw ConfigError("RFL14 family supports 2 or 3 classes, got " + std::to_string(class_count));
  }
  if (with_korigins) require_classes(classes, class_count);
  const std::string base = extra_level ? "RFL32" : "RFL14";
  Builder b((with_korigins ? "K" : "") + base, extra_level ? "III" : "II", class_count);

  if (with_korigins) b.korigins(2 * class_count, Stage::encoder, korigins_clamp_init(classes));
  b.conv_relu(w.level1, Stage::encoder);
  int skip1;
  if (with_korigins) {
    b.conv_relu(w.level1, Stage::encoder);
    skip1 = b.korigins(w.deep_weight_count, Stage::encoder);
  } else {
    skip1 = b.conv_relu(w.level1_plain_out, Stage::encoder);
  }
  b.pool();
  b.conv_relu(w.bottleneck, Stage::encoder);
  const int skip2 = b.conv_relu(w.bottleneck, Stage::encoder);
  if (extra_level) {
    b.pool();
    b.conv_relu(w.level3, Stage::encoder);
    b.conv_relu(w.level3, Stage::encoder);
    b.tconv(w.bottleneck);
    b.concat(skip2);
    b.conv_relu(w.bottleneck, Stage::decoder);
    b.conv_relu(w.bottleneck, Stage::decoder);
  }
  b.tconv(w.decoder);
  b.concat(skip1);
  b.conv_relu(w.decoder, Stage::decoder);
  b.conv_relu(w.decoder, Stage::decoder);
  return b.finish();
}

}  // namespace

void validate(const NetworkSpec& spec) {
  if (spec.class_count < 2) throw ConfigError(spec.name + ": class_count must be >= 2");
  if (spec.input_channels == 0) throw ConfigError(spec.name + ": input_channels must be >= 1");
  if (spec.layers.empty()) return;
  const auto shapes = infer_shapes(spec);
  std::size_t pools = 0, tconvs = 0;
  for (const auto& l : spec.layers) {
    pools += l.kind == LayerKind::maxpool2x2;
    tconvs += l.kind == LayerKind::tconv2d;
  }
  if (pools != tconvs) {
    throw ConfigError(spec.name + ": " + std::to_string(pools) + " pooling layers but " + std::to_string(tconvs) +
                      " transposed convolutions");
  }
  const auto& last = spec.layers.back();
  if (last.kind != LayerKind::softmax) throw ConfigError(spec.name + ": last layer must be a pixelwise softmax");
  if (last.source != static_cast<int>(spec.layers.size()) - 2) {
    throw ConfigError(spec.name + ": softmax must consume the preceding layer");
  }
  if (shapes.back().channels != spec.class_count) {
    throw ConfigError(spec.name + ": output has " + std::to_string(shapes.back().channels) + " channels for " +
                      std::to_string(spec.class_count) + " classes");
  }
  if (shapes.back().scale != 0) throw ConfigError(spec.name + ": output resolution differs from input");
}

std::size_t rfl_of_chain(const std::vector<std::pair<std::size_t, std::size_t>>& kernel_stride) {
  std::size_t r = 1;
  for (auto it = kernel_stride.rbegin(); it != kernel_stride.rend(); ++it) {
    const auto [k, s] = *it;
    r = s * r + k - s;
  }
  return r;
}

std::size_t rfl_of_network(const NetworkSpec& spec) {
  if (spec.layers.empty()) return 1;
  int deepest = -1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].stage == Stage::encoder) deepest = static_cast<int>(i);
  }
  if (deepest < 0) throw ConfigError(spec.name + ": network has no encoder layers");

  // Follow the primary input chain from the deepest encoder feature back to the input.
  std::vector<std::pair<std::size_t, std::size_t>> chain;
  for (int i = deepest; i != kNetworkInput; i = spec.layers[static_cast<std::size_t>(i)].source) {
    const LayerSpec& l = spec.layers[static_cast<std::size_t>(i)];
    if (l.kind == LayerKind::conv2d || l.kind == LayerKind::maxpool2x2) chain.emplace_back(l.kernel, l.stride);
  }
  std::reverse(chain.begin(), chain.end());
  return rfl_of_chain(chain);
}

std::size_t param_count(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv2d:
      return l.out_channels * l.in_channels * l.kernel * l.kernel + (l.bias ? l.out_channels : 0);
    case LayerKind::tconv2d:
      return l.in_channels * l.out_channels * l.kernel * l.kernel + l.out_channels;
    case LayerKind::korigins:
      return l.weight_count;
    default:
      return 0;
  }
}

std::size_t param_count(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const auto& l : spec.layers) total += param_count(l);
  return total;
}

NetworkSpec build_rfl(std::size_t rfl, std::size_t class_count) {
  return build_level_net(rfl, class_count, nullptr, {});
}

NetworkSpec build_krfl(std::size_t rfl, std::size_t class_count, const std::vector<ClassSpec>& classes,
                       const KrflOptions& options) {
  require_classes(classes, class_count);
  if (options.deep_weight_count == 0) throw ConfigError("deep K-Origins layers need at least one weight");
  return build_level_net(rfl, class_count, &classes, options);
}

NetworkSpec build_rfl14_family(std::size_t class_count, bool with_korigins, const std::vector<ClassSpec>& classes,
                               const Rfl14Widths& widths) {
  return build_rfl14_like(class_count, with_korigins, classes, widths, false);
}

NetworkSpec build_rfl32_family(std::size_t class_count, bool with_korigins, const std::vector<ClassSpec>& classes,
                               const Rfl14Widths& widths) {
  return build_rfl14_like(class_count, with_korigins, classes, widths, true);
}

NetworkSpec build_colour_net(std::size_t weight_count, std::size_t class_count,
                             const std::vector<double>& initial_origins) {
  if (weight_count == 0) throw ConfigError("colour network needs at least one K-Origins weight");
  if (class_count < 2) throw ConfigError("class_count must be >= 2");
  Builder b("colour", "", class_count);
  b.korigins(weight_count, Stage::encoder, initial_origins);
  b.conv(class_count, 1, Stage::encoder, false);
  b.simple(LayerKind::softmax, Stage::head);
  return b.finish_raw();
}

const std::vector<std::string>& network_names() {
  static const std::vector<std::string> names{"rfl8",  "rfl18", "rfl38", "krfl8", "krfl18", "krfl38",
                                              "rfl14", "krfl14", "rfl32", "krfl32", "colour"};
  return names;
}

NetworkSpec build_named(const std::string& raw_name, std::size_t class_count, const std::vector<ClassSpec>& classes) {
  std::string name = raw_name;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "rfl8") return build_rfl(8, class_count);
  if (name == "rfl18") return build_rfl(18, class_count);
  if (name == "rfl38") return build_rfl(38, class_count);
  if (name == "krfl8") return build_krfl(8, class_count, classes);
  if (name == "krfl18") return build_krfl(18, class_count, classes);
  if (name == "krfl38") return build_krfl(38, class_count, classes);
  if (name == "rfl14") return build_rfl14_family(class_count, false);
  if (name == "krfl14") return build_rfl14_family(class_count, true, classes);
  if (name == "rfl32") return build_rfl32_family(class_count, false);
  if (name == "krfl32") return build_rfl32_family(class_count, true, classes);
  if (name == "colour" || name == "color") return build_colour_net(1, class_count);
  throw ConfigError("unknown network '" + raw_name + "'");
}

const std::vector<ReferenceCount>& reference_param_counts() {
  static const std::vector<ReferenceCount> table{
      {"rfl8", 2, 71042},    {"rfl18", 2, 352962},  {"rfl38", 2, 1480002}, {"krfl8", 2, 187846},
      {"krfl18", 2, 930886}, {"krfl38", 2, 3901766}, {"rfl14", 2, 330522},  {"krfl14", 2, 274406},
      {"rfl14", 3, 445843},  {"krfl14", 3, 275169},  {"colour", 2, 5},
  };
  return table;
}

// --- JSON ------------------------------------------------------------------------------

namespace {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::encoder: return "encoder";
    case Stage::decoder: return "decoder";
    case Stage::head: return "head";
  }
  return "encoder";
}

Stage stage_from(const std::string& s) {
  if (s == "encoder") return Stage::encoder;
  if (s == "decoder") return Stage::decoder;
  if (s == "head") return Stage::head;
  throw FormatError("unknown stage '" + s + "'");
}

template <typename T>
T field(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) throw FormatError(std::string("network spec: missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("network spec: bad value for field '") + name + "'");
  }
}

}  // namespace

nlohmann::json to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json j{{"kind", to_string(l.kind)}, {"stage", stage_name(l.stage)}, {"source", l.source}};
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::tconv2d:
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["in_channels"] = l.in_channels;
        j["out_channels"] = l.out_channels;
        j["bias"] = l.bias;
        break;
      case LayerKind::maxpool2x2:
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        break;
      case LayerKind::concat:
        j["skip"] = l.skip;
        break;
      case LayerKind::korigins:
        j["weight_count"] = l.weight_count;
        j["origin_init"] = l.origin_init;
        j["origin_mu"] = l.origin_mu;
        j["origin_sigma"] = l.origin_sigma;
        break;
      default:
        break;
    }
    layers.push_back(std::move(j));
  }
  return {{"name", spec.name},
          {"depth", spec.depth_label},
          {"input_channels", spec.input_channels},
          {"class_count", spec.class_count},
          {"layers", std::move(layers)}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.name = field<std::string>(j, "name");
  spec.depth_label = field<std::string>(j, "depth");
  spec.input_channels = field<std::size_t>(j, "input_channels");
  spec.class_count = field<std::size_t>(j, "class_count");
  const auto& layers = j.at("layers");
  if (!layers.is_array()) throw FormatError("network spec: 'layers' must be an array");
  for (const auto& lj : layers) {
    LayerSpec l;
    l.kind = layer_kind_from_string(field<std::string>(lj, "kind"));
    l.stage = stage_from(field<std::string>(lj, "stage"));
    l.source = field<int>(lj, "source");
    switch (l.kind) {
      case LayerKind::conv2d:
      case LayerKind::tconv2d:
        l.kernel = field<std::size_t>(lj, "kernel");
        l.stride = field<std::size_t>(lj, "stride");
        l.in_channels = field<std::size_t>(lj, "in_channels");
        l.out_channels = field<std::size_t>(lj, "out_channels");
        l.bias = field<bool>(lj, "bias");
        break;
      case LayerKind::maxpool2x2:
        l.kernel = field<std::size_t>(lj, "kernel");
        l.stride = field<std::size_t>(lj, "stride");
        break;
      case LayerKind::concat:
        l.skip = field<int>(lj, "skip");
        break;
      case LayerKind::korigins:
        l.weight_count = field<std::size_t>(lj, "weight_count");
        l.origin_init = field<std::vector<double>>(lj, "origin_init");
        l.origin_mu = field<double>(lj, "origin_mu");
        l.origin_sigma = field<double>(lj, "origin_sigma");
        break;
      default:
        break;
    }
    spec.layers.push_back(std::move(l));
  }
  try {
    validate(spec);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("network spec: ") + e.what());
  }
  return spec;
}

void save_network_spec(const NetworkSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write network spec '" + path + "'");
  out << to_json(spec).dump(2) << '\n';
  if (!out) throw IoError("failed writing network spec '" + path + "'");
}

NetworkSpec load_network_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read network spec '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("network spec '" + path + "': " + e.what());
  }
  return network_spec_from_json(j);
}

}  // namespace korigins
