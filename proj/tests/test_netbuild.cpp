#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "korigins/error.hpp"
#include "korigins/netbuild.hpp"
#include "korigins/network.hpp"
#include "support.hpp"

using namespace korigins;
using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_tensor;

namespace {

const std::vector<ClassSpec> kTwo{{20000, 0}, {25000, 0}};
const std::vector<ClassSpec> kThree{{16500, 900}, {20000, 1000}, {22000, 1000}};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

LayerSpec conv(std::size_t k, std::size_t in, std::size_t out, int source) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.kernel = k;
  l.in_channels = in;
  l.out_channels = out;
  l.source = source;
  return l;
}

LayerSpec pool(int source) {
  LayerSpec l;
  l.kind = LayerKind::maxpool2x2;
  l.kernel = 2;
  l.stride = 2;
  l.source = source;
  return l;
}

}  // namespace

TEST_CASE("rfl recursion on hand chains") {
  CHECK(rfl_of_chain({}) == 1);
  CHECK(rfl_of_chain({{3, 1}}) == 3);
  CHECK(rfl_of_chain({{3, 1}, {2, 2}, {3, 1}}) == 8);
  CHECK(rfl_of_chain({{3, 1}, {2, 2}, {3, 1}, {2, 2}, {3, 1}}) == 18);
  CHECK(rfl_of_chain({{3, 1}, {2, 2}, {3, 1}, {2, 2}, {3, 1}, {2, 2}, {3, 1}}) == 38);
  CHECK(rfl_of_chain({{3, 1}, {3, 1}, {2, 2}, {3, 1}, {3, 1}}) == 14);

  // Step by step for RFL8, deepest layer first: 1 -> 3 -> 6 -> 8.
  CHECK(rfl_of_chain({{3, 1}}) == 3);
  CHECK(rfl_of_chain({{2, 2}, {3, 1}}) == 6);

  // Appending (pool, conv3) maps r to 2r + 2.
  std::vector<std::pair<std::size_t, std::size_t>> chain{{3, 1}, {2, 2}, {3, 1}};
  std::size_t r = rfl_of_chain(chain);
  for (int i = 0; i < 4; ++i) {
    chain.push_back({2, 2});
    chain.push_back({3, 1});
    CHECK(rfl_of_chain(chain) == 2 * r + 2);
    r = rfl_of_chain(chain);
  }

  NetworkSpec empty;
  CHECK(rfl_of_network(empty) == 1);

  NetworkSpec single;
  single.layers.push_back(conv(3, 1, 4, kNetworkInput));
  CHECK(rfl_of_network(single) == 3);

  NetworkSpec hand;
  hand.layers = {conv(3, 1, 4, kNetworkInput), pool(0), conv(3, 4, 4, 1)};
  CHECK(rfl_of_network(hand) == 8);
}

TEST_CASE("built networks report the rfl in their name") {
  CHECK(rfl_of_network(build_rfl(8)) == 8);
  CHECK(rfl_of_network(build_rfl(18)) == 18);
  CHECK(rfl_of_network(build_rfl(38)) == 38);
  CHECK(rfl_of_network(build_krfl(8, 2, kTwo)) == 8);
  CHECK(rfl_of_network(build_krfl(18, 2, kTwo)) == 18);
  CHECK(rfl_of_network(build_krfl(38, 2, kTwo)) == 38);
  CHECK(rfl_of_network(build_rfl14_family(2, false)) == 14);
  CHECK(rfl_of_network(build_rfl14_family(3, true, kThree)) == 14);
  CHECK(rfl_of_network(build_rfl32_family(2, false)) == 32);
  CHECK(rfl_of_network(build_rfl32_family(2, true, kTwo)) == 32);
  CHECK(rfl_of_network(build_colour_net()) == 1);
  CHECK_THROWS_AS(build_rfl(10), ConfigError);
}

TEST_CASE("parameter counts") {
  CHECK(param_count(build_rfl(8)) == 71042);
  CHECK(param_count(build_rfl(18)) == 352962);
  CHECK(param_count(build_rfl(38)) == 1480002);
  CHECK(param_count(build_colour_net()) == 5);
  CHECK(param_count(build_colour_net(6, 7)) == 6 + 7 * 7);

  const NetworkSpec r8 = build_rfl(8);
  std::vector<std::size_t> per_layer;
  for (const auto& l : r8.layers)
    if (param_count(l) > 0) per_layer.push_back(param_count(l));
  CHECK(per_layer == std::vector<std::size_t>{400, 28880, 12840, 28840, 82});

  const auto k2 = build_rfl14_family(2, true, kTwo);
  const auto k3 = build_rfl14_family(3, true, {{20000, 0}, {25000, 0}, {30000, 0}});
  CHECK(param_count(k3) - param_count(k2) == 763);

  Rng rng(1);
  Network net(build_rfl(8), rng);
  CHECK(net.param_count() == 71042);
}

TEST_CASE("k-origins builders") {
  const NetworkSpec k8 = build_krfl(8, 2, kTwo);
  REQUIRE(k8.layers.front().kind == LayerKind::korigins);
  CHECK(k8.layers.front().origin_init == std::vector<double>{20000, 20000, 25000, 25000});
  const auto first_conv =
      std::find_if(k8.layers.begin(), k8.layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::conv2d; });
  CHECK(first_conv->in_channels == 5);
  std::size_t deep = 0;
  for (std::size_t i = 1; i < k8.layers.size(); ++i) {
    const auto& l = k8.layers[i];
    if (l.kind != LayerKind::korigins) continue;
    ++deep;
    CHECK(l.weight_count == 3);
    CHECK(l.origin_init.empty());
    CHECK(l.origin_mu == 20000.0);
    CHECK(l.origin_sigma == 5000.0);
    CHECK(k8.layers[i + 1].in_channels == 40 * 4);
  }
  CHECK(deep == 1);
  CHECK_THROWS_AS(build_krfl(8, 2, {}), ConfigError);

  const NetworkSpec k14 = build_rfl14_family(2, true, kTwo);
  for (std::size_t i = 0; i + 1 < k14.layers.size(); ++i) {
    if (k14.layers[i].kind == LayerKind::maxpool2x2) {
      const auto& next = k14.layers[i + 1];
      CHECK(next.in_channels == 200);
    }
  }
  const NetworkSpec p14 = build_rfl14_family(2, false);
  for (std::size_t i = 0; i + 1 < p14.layers.size(); ++i)
    if (p14.layers[i].kind == LayerKind::maxpool2x2) CHECK(p14.layers[i + 1].in_channels == 200);
  CHECK_THROWS_AS(build_rfl14_family(4, false), ConfigError);

  const NetworkSpec colour = build_colour_net(6, 7);
  CHECK(colour.layers.front().weight_count == 6);
  CHECK(colour.class_count == 7);
}

TEST_CASE("every named network validates and runs") {
  for (const auto& name : network_names()) {
    CAPTURE(name);
    const NetworkSpec spec = build_named(name, 2, kTwo);
    CHECK_NOTHROW(validate(spec));
    Rng rng(2);
    Network net(spec, rng);
    net.set_precision(Precision::f32);
    Rng data(3);
    Tensor x({1, 200, 200});
    for (auto& v : x.data()) v = data.uniform_int(0, 1) ? 25000.0 : 20000.0;
    const Tensor p = net.forward(x);
    REQUIRE(p.dims() == std::vector<std::size_t>{2, 200, 200});
    double worst = 0.0;
    for (std::size_t px = 0; px < 40000; ++px) worst = std::max(worst, std::abs(p[px] + p[40000 + px] - 1.0));
    CHECK(worst < 1e-12);
  }
  CHECK(build_named("KRFL14", 3, kThree).class_count == 3);
  CHECK_THROWS_AS(build_named("resnet", 2, kTwo), ConfigError);
}

TEST_CASE("validate rejects broken wiring") {
  NetworkSpec spec = build_rfl(8);
  for (auto& l : spec.layers)
    if (l.kind == LayerKind::conv2d && l.in_channels == 40) {
      l.in_channels = 41;
      break;
    }
  CHECK_THROWS_AS(validate(spec), ConfigError);

  spec = build_rfl(8);
  for (auto& l : spec.layers)
    if (l.kind == LayerKind::concat) l.skip = static_cast<int>(spec.layers.size()) + 3;
  CHECK_THROWS_AS(validate(spec), ConfigError);

  spec = build_rfl(18);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == LayerKind::tconv2d) {
      spec.layers.erase(spec.layers.begin() + static_cast<long>(i));
      break;
    }
  }
  CHECK_THROWS_AS(validate(spec), ConfigError);
}

TEST_CASE("network spec json round trip") {
  for (const auto& name : network_names()) {
    const NetworkSpec spec = build_named(name, 2, kTwo);
    CHECK(network_spec_from_json(to_json(spec)) == spec);
  }
  const auto dir = testing::temp_dir("netjson");
  const NetworkSpec spec = build_krfl(18, 2, kTwo);
  save_network_spec(spec, (dir / "net.json").string());
  CHECK(load_network_spec((dir / "net.json").string()) == spec);
  CHECK_THROWS_AS(network_spec_from_json(nlohmann::json{{"name", "x"}}), FormatError);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testing::temp_dir("ckpt");
  const std::string path = (dir / "m.korg").string();
  const NetworkSpec spec = build_krfl(8, 2, kTwo);
  Rng rng(4);
  Network net(spec, rng);
  save_checkpoint(net, path);

  std::size_t scalars = 0;
  for (const auto& rec : read_checkpoint(path)) scalars += rec.values.size();
  CHECK(scalars == net.param_count());

  Network loaded = load_checkpoint(path, spec);
  auto a = net.params();
  auto b = loaded.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    REQUIRE(a[i].value->dims() == b[i].value->dims());
    for (std::size_t j = 0; j < a[i].value->size(); ++j)
      CHECK(b[i].value->data()[j] == static_cast<double>(static_cast<float>(a[i].value->data()[j])));
  }
  const std::string again = (dir / "again.korg").string();
  save_checkpoint(loaded, again);
  CHECK(slurp(again) == slurp(path));

  Network r8(build_rfl(8), rng);
  save_checkpoint(r8, path);
  scalars = 0;
  for (const auto& rec : read_checkpoint(path)) scalars += rec.values.size();
  CHECK(scalars == 71042);
  CHECK(slurp(path).substr(0, 4) == "KORG");
}

TEST_CASE("checkpoint corruption is rejected") {
  const auto dir = testing::temp_dir("ckpt_bad");
  const std::string path = (dir / "m.korg").string();
  const NetworkSpec spec = build_rfl(8);
  Rng rng(5);
  Network net(spec, rng);
  save_checkpoint(net, path);
  const std::string good = slurp(path);

  for (std::size_t cut : {std::size_t{2}, std::size_t{6}, std::size_t{40}, good.size() / 2, good.size() - 1}) {
    spit(path, good.substr(0, cut));
    CHECK_THROWS_AS(load_checkpoint(path, spec), FormatError);
  }

  std::string bad = good;
  bad[0] = 'X';
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path, spec), FormatError);

  bad = good;
  bad[4] = 9;
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path, spec), FormatError);

  spit(path, good + "x");
  CHECK_THROWS_AS(load_checkpoint(path, spec), FormatError);

  spit(path, good);
  CHECK_THROWS_AS(load_checkpoint(path, build_rfl(18)), FormatError);
  try {
    load_checkpoint(path, build_rfl(8, 3));
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("conv2d") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.korg").string(), spec), IoError);
}

// The whole RFL8 network against central differences, sampled per tensor.
// Dead ReLU paths give gradients at the FD noise floor, so the error is
// taken over each sampled vector rather than per entry.
TEST_CASE("composed rfl8 gradient") {
  Rng rng(6);
  Network net(build_rfl(8), rng);
  for (auto& p : net.params())
    if (p.value->rank() == 1)
      for (auto& v : p.value->data()) v = rng.uniform(-0.1, 0.1);
  Tensor x = random_tensor(rng, {1, 8, 8});
  const Tensor r = random_tensor(rng, {2, 8, 8});
  auto loss = [&] { return dot(net.forward(x), r); };

  net.forward(x);
  net.zero_grad();
  net.backward(r);
  const auto params = net.params();

  Rng pick(7);
  for (const auto& p : params) {
    CAPTURE(p.name);
    const Tensor analytic = *p.grad;
    std::vector<double> a, n;
    const std::size_t samples = std::min<std::size_t>(p.value->size(), 24);
    for (std::size_t s = 0; s < samples; ++s) {
      const auto i = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(p.value->size()) - 1));
      a.push_back(analytic[i]);
      auto one = std::span<double>(p.value->data().subspan(i, 1));
      n.push_back(numeric_gradient(loss, one, 1e-5)[0]);
    }
    CHECK(testing::norm_relative_error(a, n) < 1e-6);
  }
}

TEST_CASE("composed krfl8 gradient on the origins") {
  Rng rng(8);
  NetworkSpec spec = build_krfl(8, 2, {{0.2, 0.1}, {0.6, 0.1}});
  for (auto& l : spec.layers) {
    l.origin_mu = 0.0;
    l.origin_sigma = 0.5;
  }
  Network net(spec, rng);
  Tensor x = random_tensor(rng, {1, 8, 8});
  const Tensor r = random_tensor(rng, {2, 8, 8});
  auto loss = [&] { return dot(net.forward(x), r); };
  net.forward(x);
  net.zero_grad();
  net.backward(r);
  for (const auto& p : net.params()) {
    if (p.group != ParamGroup::korigins) continue;
    CAPTURE(p.name);
    const Tensor analytic = *p.grad;
    CHECK(max_relative_error(analytic.data(), numeric_gradient(loss, p.value->data(), 1e-5)) < 1e-6);
  }
}
