#include "korigins/network.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "korigins/error.hpp"

namespace korigins {

namespace {

std::unique_ptr<Layer> make_layer(const LayerSpec& l, Rng& rng) {
  switch (l.kind) {
    case LayerKind::conv2d: {
      auto layer = std::make_unique<Conv2DLayer>(l.in_channels, l.out_channels, l.kernel, l.bias);
      layer->initialize(rng);
      return layer;
    }
    case LayerKind::tconv2d: {
      auto layer = std::make_unique<TConv2DLayer>(l.in_channels, l.out_channels);
      layer->initialize(rng);
      return layer;
    }
    case LayerKind::maxpool2x2: return std::make_unique<MaxPoolLayer>();
    case LayerKind::relu: return std::make_unique<ReLULayer>();
    case LayerKind::softmax: return std::make_unique<SoftmaxLayer>();
    case LayerKind::concat: return std::make_unique<ConcatLayer>();
    case LayerKind::korigins: {
      auto layer = std::make_unique<KOriginsLayer>(l.weight_count);
      auto& w = layer->weights();
      for (std::size_t k = 0; k < l.weight_count; ++k) {
        w[k] = l.origin_init.empty() ? gaussian_draw(rng, l.origin_mu, l.origin_sigma) : l.origin_init[k];
      }
      return layer;
    }
  }
  throw ConfigError("unknown layer kind");
}

std::string param_name(std::size_t index, LayerKind kind, const std::string& leaf) {
  char prefix[16];
  std::snprintf(prefix, sizeof prefix, "%02zu.", index);
  return prefix + std::string(to_string(kind)) + "." + leaf;
}

}  // namespace

Network::Network(NetworkSpec spec, Rng& rng) : spec_(std::move(spec)) {
  validate(spec_);
  if (spec_.layers.empty()) throw ConfigError(spec_.name + ": network has no layers");
  layers_.reserve(spec_.layers.size());
  for (const auto& l : spec_.layers) layers_.push_back(make_layer(l, rng));

  last_use_.assign(spec_.layers.size(), -1);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (l.source >= 0) last_use_[static_cast<std::size_t>(l.source)] = static_cast<int>(i);
    if (l.skip >= 0) last_use_[static_cast<std::size_t>(l.skip)] = static_cast<int>(i);
  }
}

Tensor Network::forward(const Tensor& input) {
  require_rank(input, 3, "network input");
  if (input.dim(0) != spec_.input_channels) {
    throw ShapeError(spec_.name + ": expected " + std::to_string(spec_.input_channels) + " input channels, got " +
                     input.shape_string());
  }
  auto input_ptr = std::make_shared<const Tensor>(input);
  std::vector<TensorPtr> acts(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = spec_.layers[i];
    std::vector<TensorPtr> inputs;
    inputs.push_back(l.source == kNetworkInput ? input_ptr : acts[static_cast<std::size_t>(l.source)]);
    if (l.kind == LayerKind::concat) inputs.push_back(acts[static_cast<std::size_t>(l.skip)]);
    acts[i] = layers_[i]->forward(inputs);
    // Drop activations nobody else reads; layer caches keep what backward needs.
    if (l.source >= 0 && last_use_[static_cast<std::size_t>(l.source)] == static_cast<int>(i)) {
      acts[static_cast<std::size_t>(l.source)].reset();
    }
    if (l.skip >= 0 && last_use_[static_cast<std::size_t>(l.skip)] == static_cast<int>(i)) {
      acts[static_cast<std::size_t>(l.skip)].reset();
    }
  }
  return *acts.back();
}

void Network::backward_from(std::size_t start, Tensor grad) {
  std::vector<Tensor> grads(layers_.size());
  grads[start] = std::move(grad);
  for (std::size_t i = start + 1; i-- > 0;) {
    if (grads[i].empty()) continue;
    auto in_grads = layers_[i]->backward(grads[i]);
    grads[i] = Tensor();
    const auto& l = spec_.layers[i];
    auto route = [&](int target, Tensor&& g) {
      if (target == kNetworkInput) return;
      auto& slot = grads[static_cast<std::size_t>(target)];
      if (slot.empty()) {
        slot = std::move(g);
      } else {
        slot += g;
      }
    };
    route(l.source, std::move(in_grads[0]));
    if (l.kind == LayerKind::concat) route(l.skip, std::move(in_grads[1]));
  }
}

void Network::backward(const Tensor& grad_probs) { backward_from(layers_.size() - 1, grad_probs); }

void Network::backward_from_logits(const Tensor& grad_logits) {
  if (spec_.layers.back().kind != LayerKind::softmax || layers_.size() < 2) {
    throw ConfigError(spec_.name + ": fused backward needs a trailing softmax");
  }
  backward_from(layers_.size() - 2, grad_logits);
}

std::vector<NamedParam> Network::params() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& p : layers_[i]->params()) {
      out.push_back({param_name(i, layers_[i]->kind(), p.name), p.value, p.grad, p.group});
    }
  }
  return out;
}

std::size_t Network::param_count() {
  std::size_t n = 0;
  for (auto& p : params()) n += p.value->size();
  return n;
}

void Network::zero_grad() {
  for (auto& l : layers_) l->zero_grad();
}

void Network::reset_cache() {
  for (auto& l : layers_) l->reset_cache();
}

void Network::set_precision(Precision precision) {
  for (auto& l : layers_) l->set_precision(precision);
}

// --- checkpoint I/O ------------------------------------------------------------------

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  bool done() const { return pos_ == bytes_.size(); }

  const unsigned char* take(std::size_t n, const std::string& context) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated while reading " + context);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }
  std::uint8_t u8(const std::string& ctx) { return take(1, ctx)[0]; }
  std::uint16_t u16(const std::string& ctx) {
    const auto* p = take(2, ctx);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32(const std::string& ctx) {
    const auto* p = take(4, ctx);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(Network& net, const std::string& path) {
  std::string out(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& p : net.params()) {
    if (p.name.size() > 0xFFFF) throw FormatError("parameter name too long: " + p.name);
    put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    out.push_back(static_cast<char>(p.value->rank()));
    for (auto d : p.value->dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value->data()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write checkpoint '" + path + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing checkpoint '" + path + "'");
}

std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot read checkpoint '" + path + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(file), {}));

  const auto* magic = r.take(4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("'" + path + "' is not a KORG checkpoint");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  std::vector<CheckpointRecord> records;
  while (!r.done()) {
    CheckpointRecord rec;
    const std::string ctx = "record " + std::to_string(records.size());
    const std::uint16_t name_len = r.u16(ctx + " name length");
    const auto* name = r.take(name_len, ctx + " name");
    rec.name.assign(reinterpret_cast<const char*>(name), name_len);
    const std::uint8_t rank = r.u8(rec.name + " rank");
    if (rank == 0 || rank > 4) throw FormatError("record '" + rec.name + "' has invalid rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      rec.dims.push_back(r.u32(rec.name + " dims"));
      if (rec.dims.back() == 0) throw FormatError("record '" + rec.name + "' has a zero dimension");
      count *= rec.dims.back();
    }
    rec.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint32_t bits = r.u32(rec.name + " payload");
      std::memcpy(&rec.values[i], &bits, sizeof bits);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

Network load_checkpoint(const std::string& path, const NetworkSpec& spec) {
  const auto records = read_checkpoint(path);
  Rng rng(0);
  Network net(spec, rng);
  auto params = net.params();
  if (records.size() != params.size()) {
    throw FormatError("checkpoint '" + path + "' has " + std::to_string(records.size()) + " records, network " +
                      spec.name + " expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& rec = records[i];
    auto& p = params[i];
    if (rec.name != p.name) {
      throw FormatError("checkpoint record '" + rec.name + "' does not match expected parameter '" + p.name + "'");
    }
    std::vector<std::size_t> dims(rec.dims.begin(), rec.dims.end());
    if (dims != p.value->dims()) {
      throw FormatError("checkpoint record '" + rec.name + "' has shape mismatch");
    }
    for (std::size_t k = 0; k < rec.values.size(); ++k) (*p.value)[k] = static_cast<double>(rec.values[k]);
  }
  return net;
}

}  // namespace korigins
