#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "korigins/error.hpp"
#include "korigins/layers.hpp"
#include "support.hpp"

using namespace korigins;
using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_tensor;

namespace {

TensorPtr share(const Tensor& t) { return std::make_shared<const Tensor>(t); }

Tensor run(Layer& layer, const Tensor& x) {
  const TensorPtr in[] = {share(x)};
  return *layer.forward(in);
}

Tensor sum_blocks(const Tensor& t, std::size_t blocks) {
  const std::size_t c = t.dim(0) / blocks;
  Tensor out({c, t.dim(1), t.dim(2)});
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t[b * out.size() + i];
  return out;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace

TEST_CASE("korigins forward examples") {
  const Tensor x({1, 1, 1}, 25000.0);
  const std::vector<double> w{20000.0};
  const Tensor y = korigins_forward(x, w);
  REQUIRE(y.dims() == std::vector<std::size_t>{2, 1, 1});
  CHECK(y[0] == 25000.0);
  CHECK(y[1] == 5000.0);

  Rng rng(1);
  const Tensor img = random_tensor(rng, {1, 4, 4}, 30000.0);
  CHECK(korigins_forward(img, std::vector<double>{1, 2, 3, 4}).dim(0) == 5);
  CHECK(korigins_forward(random_tensor(rng, {40, 2, 2}), std::vector<double>{1, 2, 3, 4}).dim(0) == 200);

  const Tensor zero = korigins_forward(img, std::vector<double>{0.0});
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(zero[img.size() + i] == img[i]);
  CHECK_THROWS_AS(korigins_forward(img, std::vector<double>{}), ConfigError);
}

TEST_CASE("korigins blocks reconstruct the input exactly") {
  Rng rng(2);
  Tensor x({3, 5, 7});
  for (auto& v : x.data()) v = static_cast<double>(rng.uniform_int(0, 65535));
  const std::vector<double> w{20000, 16000, 24000, 21000, 29000, 0, 65535};
  const Tensor y = korigins_forward(x, w);
  for (std::size_t k = 0; k < w.size(); ++k)
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[(k + 1) * x.size() + i] + w[k] == x[i]);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("korigins backward") {
  const auto zero = korigins_backward(Tensor({6, 2, 2}), 2);
  for (double v : zero.input.data()) CHECK(v == 0.0);
  for (double v : zero.weights) CHECK(v == 0.0);

  Rng rng(3);
  const Tensor up = random_tensor(rng, {2, 3, 3});
  const auto g = korigins_backward(up, 1);
  for (std::size_t i = 0; i < 9; ++i) CHECK(g.input[i] == doctest::Approx(up[i] + up[9 + i]).epsilon(1e-15));
  double s1 = 0.0;
  for (std::size_t i = 9; i < 18; ++i) s1 += up[i];
  CHECK(g.weights[0] == doctest::Approx(-s1).epsilon(1e-15));

  CHECK_THROWS_AS(korigins_backward(Tensor({5, 2, 2}), 1), ShapeError);

  Tensor x = random_tensor(rng, {2, 4, 5}, 3e4);
  std::vector<double> w = testing::random_values(rng, 3, 3e4);
  const Tensor r = random_tensor(rng, {8, 4, 5});
  auto loss = [&] { return dot(korigins_forward(x, w), r); };
  const auto gr = korigins_backward(r, 3);
  CHECK(max_relative_error(gr.weights, numeric_gradient(loss, w, 1.0)) < 1e-8);
  CHECK(max_relative_error(gr.input.data(), numeric_gradient(loss, x.data(), 1.0)) < 1e-8);
}

TEST_CASE("clamp initialization") {
  CHECK(korigins_clamp_init(std::vector<ClassSpec>{{20000, 0}, {25000, 0}}) ==
        std::vector<double>{20000, 20000, 25000, 25000});
  CHECK(korigins_clamp_init(std::vector<ClassSpec>{{20000, 2000}, {25000, 2000}}) ==
        std::vector<double>{16000, 24000, 21000, 29000});
  CHECK(korigins_clamp_init(std::vector<ClassSpec>{{123.5, 0}}) == std::vector<double>{123.5, 123.5});
}

TEST_CASE("relu softmax concat examples") {
  const Tensor x({1, 1, 3}, std::vector<double>{-3, 0, 5});
  const Tensor y = relu_forward(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 5.0);
  const Tensor g = relu_backward(x, Tensor({1, 1, 3}, 1.0));
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 1.0);

  const Tensor p = softmax_pixelwise_forward(Tensor({2, 3, 3}, 7.0));
  for (double v : p.data()) CHECK(v == 0.5);

  Rng rng(4);
  const Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {3, 3, 4});
  const Tensor c = concat_forward(a, b);
  REQUIRE(c.dims() == std::vector<std::size_t>{5, 3, 4});
  const auto [ga, gb] = concat_backward(c, 2);
  CHECK(ga.data().size() == a.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(ga[i] == a[i]);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(gb[i] == b[i]);
  CHECK_THROWS_AS(concat_forward(a, Tensor({3, 3, 5})), ShapeError);
}

TEST_CASE("softmax outputs are a distribution per pixel") {
  Rng rng(5);
  for (double scale : {1.0, 50.0, 1e4}) {
    const Tensor p = softmax_pixelwise_forward(random_tensor(rng, {4, 6, 6}, scale));
    for (std::size_t px = 0; px < 36; ++px) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double v = p[c * 36 + px];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        if (scale == 1.0) CHECK((v > 0.0 && v < 1.0));
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("elementwise layer gradients match finite differences") {
  Rng rng(6);
  Tensor x = random_tensor(rng, {3, 4, 4}, 3.0);
  const Tensor r = random_tensor(rng, {3, 4, 4});

  auto relu_loss = [&] { return dot(relu_forward(x), r); };
  CHECK(max_relative_error(relu_backward(x, r).data(), numeric_gradient(relu_loss, x.data())) < 1e-6);

  auto soft_loss = [&] { return dot(softmax_pixelwise_forward(x), r); };
  const Tensor sg = softmax_pixelwise_backward(softmax_pixelwise_forward(x), r);
  CHECK(max_relative_error(sg.data(), numeric_gradient(soft_loss, x.data())) < 1e-6);

  Tensor a = random_tensor(rng, {1, 4, 4});
  const Tensor rc = random_tensor(rng, {4, 4, 4});
  auto cat_loss = [&] { return dot(concat_forward(x, a), rc); };
  const auto [gx, ga] = concat_backward(rc, 3);
  CHECK(max_relative_error(gx.data(), numeric_gradient(cat_loss, x.data())) < 1e-6);
  CHECK(max_relative_error(ga.data(), numeric_gradient(cat_loss, a.data())) < 1e-6);
}

TEST_CASE("glorot initialization") {
  Rng rng(7);
  const ConvParams tiny = init_conv_params(rng, 1, 1, 1);
  CHECK(std::abs(tiny.kernels[0]) <= std::sqrt(3.0));

  const ConvParams p = init_conv_params(rng, 40, 80, 3);
  CHECK(p.kernels.dims() == std::vector<std::size_t>{80, 40, 3, 3});
  for (double b : p.bias) CHECK(b == 0.0);

  const double limit = std::sqrt(6.0 / (40.0 * 9 + 80.0 * 9));
  std::vector<double> draws;
  while (draws.size() < 100000) {
    const ConvParams q = init_conv_params(rng, 40, 80, 3);
    draws.insert(draws.end(), q.kernels.data().begin(), q.kernels.data().end());
  }
  double mean = 0.0, var = 0.0;
  for (double v : draws) {
    CHECK(std::abs(v) <= limit);
    mean += v;
  }
  mean /= static_cast<double>(draws.size());
  for (double v : draws) var += (v - mean) * (v - mean);
  var /= static_cast<double>(draws.size() - 1);
  CHECK(std::abs(var - limit * limit / 3.0) < 0.05 * limit * limit / 3.0);

  const ConvParams t = init_tconv_params(rng, 80, 40, 2);
  CHECK(t.kernels.dims() == std::vector<std::size_t>{80, 40, 2, 2});
  CHECK(t.bias.size() == 40);
}

TEST_CASE("layer caches and parameter shapes") {
  Rng rng(8);
  Conv2DLayer conv(2, 3, 3, true);
  conv.initialize(rng);
  TConv2DLayer tconv(3, 2);
  tconv.initialize(rng);
  KOriginsLayer ko(2);
  MaxPoolLayer pool;
  ReLULayer relu;
  SoftmaxLayer soft;
  std::vector<Layer*> layers{&conv, &tconv, &ko, &pool, &relu, &soft};
  for (Layer* l : layers) {
    CHECK_FALSE(l->has_cache());
    for (const auto& p : l->params()) CHECK(p.value->dims() == p.grad->dims());
  }
  CHECK(conv.params().size() == 2);
  CHECK(ko.params().at(0).group == ParamGroup::korigins);
  CHECK(conv.params().at(0).group == ParamGroup::conv);

  const Tensor x = random_tensor(rng, {2, 4, 4});
  run(conv, x);
  CHECK(conv.has_cache());
  conv.reset_cache();
  CHECK_FALSE(conv.has_cache());
  CHECK_THROWS(conv.backward(Tensor({3, 4, 4})));

  run(pool, x);
  CHECK(pool.has_cache());
  pool.reset_cache();
  CHECK_FALSE(pool.has_cache());

  ConcatLayer cat;
  const TensorPtr pair[] = {share(x), share(x)};
  cat.forward(pair);
  CHECK(cat.has_cache());
  cat.reset_cache();
  CHECK_FALSE(cat.has_cache());
}

TEST_CASE("layer gradients accumulate until zero_grad") {
  Rng rng(9);
  KOriginsLayer ko(2);
  ko.weights()[0] = 100.0;
  ko.weights()[1] = -50.0;
  const Tensor x = random_tensor(rng, {1, 3, 3});
  const Tensor up = random_tensor(rng, {3, 3, 3});
  run(ko, x);
  ko.backward(up);
  const double once = ko.params()[0].grad->data()[0];
  run(ko, x);
  ko.backward(up);
  CHECK(ko.params()[0].grad->data()[0] == doctest::Approx(2.0 * once));
  ko.zero_grad();
  CHECK(ko.params()[0].grad->data()[0] == 0.0);
}

// Two-layer chains through the layer objects; the loss is <out, r>.
TEST_CASE("two-layer composites match finite differences") {
  Rng rng(10);

  SUBCASE("korigins then conv") {
    KOriginsLayer ko(2);
    ko.weights()[0] = 21000.0;
    ko.weights()[1] = 18000.0;
    Conv2DLayer conv(3, 2, 3, true);
    conv.initialize(rng);
    Tensor x = random_tensor(rng, {1, 5, 5}, 3e4);
    const Tensor r = random_tensor(rng, {2, 5, 5});
    auto forward = [&] { return dot(run(conv, run(ko, x)), r); };
    forward();
    ko.zero_grad();
    conv.zero_grad();
    const Tensor gx = ko.backward(conv.backward(r)[0])[0];
    CHECK(max_relative_error(gx.data(), numeric_gradient(forward, x.data(), 1.0)) < 1e-6);
    CHECK(max_relative_error(ko.params()[0].grad->data(), numeric_gradient(forward, ko.weights().data(), 1.0)) <
          1e-6);
    const auto gk = *conv.params()[0].grad;
    CHECK(max_relative_error(gk.data(), numeric_gradient(forward, conv.kernels().data(), 1e-4)) < 1e-6);
  }

  SUBCASE("conv relu pool") {
    Conv2DLayer conv(2, 3, 3, true);
    conv.initialize(rng);
    for (auto& b : conv.bias().data()) b = rng.uniform(-0.5, 0.5);
    ReLULayer relu;
    MaxPoolLayer pool;
    Tensor x = random_tensor(rng, {2, 6, 6});
    const Tensor r = random_tensor(rng, {3, 3, 3});
    auto forward = [&] { return dot(run(pool, run(relu, run(conv, x))), r); };
    forward();
    conv.zero_grad();
    const Tensor gx = conv.backward(relu.backward(pool.backward(r)[0])[0])[0];
    CHECK(max_relative_error(gx.data(), numeric_gradient(forward, x.data(), 1e-6)) < 1e-6);
    CHECK(max_relative_error(conv.params()[0].grad->data(), numeric_gradient(forward, conv.kernels().data(), 1e-6)) <
          1e-6);
    CHECK(max_relative_error(conv.params()[1].grad->data(), numeric_gradient(forward, conv.bias().data(), 1e-6)) <
          1e-6);
  }

  SUBCASE("tconv then concat then conv") {
    TConv2DLayer up(3, 2);
    up.initialize(rng);
    for (auto& b : up.bias().data()) b = rng.uniform(-0.5, 0.5);
    ConcatLayer cat;
    Conv2DLayer conv(4, 2, 3, true);
    conv.initialize(rng);
    Tensor x = random_tensor(rng, {3, 2, 3});
    Tensor skip = random_tensor(rng, {2, 4, 6});
    const Tensor r = random_tensor(rng, {2, 4, 6});
    auto forward = [&] {
      const TensorPtr in[] = {share(run(up, x)), share(skip)};
      return dot(run(conv, *cat.forward(in)), r);
    };
    forward();
    up.zero_grad();
    conv.zero_grad();
    const auto cg = cat.backward(conv.backward(r)[0]);
    const Tensor gx = up.backward(cg[0])[0];
    CHECK(max_relative_error(gx.data(), numeric_gradient(forward, x.data())) < 1e-6);
    CHECK(max_relative_error(cg[1].data(), numeric_gradient(forward, skip.data())) < 1e-6);
    CHECK(max_relative_error(up.params()[0].grad->data(), numeric_gradient(forward, up.kernels().data())) < 1e-6);
    CHECK(max_relative_error(up.params()[1].grad->data(), numeric_gradient(forward, up.bias().data())) < 1e-6);
  }

  SUBCASE("conv then softmax") {
    Conv2DLayer conv(2, 3, 1, true);
    conv.initialize(rng);
    SoftmaxLayer soft;
    Tensor x = random_tensor(rng, {2, 3, 3}, 2.0);
    const Tensor r = random_tensor(rng, {3, 3, 3});
    auto forward = [&] { return dot(run(soft, run(conv, x)), r); };
    forward();
    conv.zero_grad();
    const Tensor gx = conv.backward(soft.backward(r)[0])[0];
    CHECK(max_relative_error(gx.data(), numeric_gradient(forward, x.data())) < 1e-6);
    CHECK(max_relative_error(conv.params()[0].grad->data(), numeric_gradient(forward, conv.kernels().data())) <
          1e-6);
  }
}

TEST_CASE("block sums of korigins gradients") {
  Rng rng(11);
  const Tensor up = random_tensor(rng, {12, 2, 2});
  const auto g = korigins_backward(up, 3);
  const Tensor expect = sum_blocks(up, 4);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(g.input[i] == doctest::Approx(expect[i]).epsilon(1e-14));
  double total = 0.0, first = 0.0;
  for (double v : g.weights) total += v;
  for (std::size_t i = 0; i < 12; ++i) first += up[i];
  CHECK(total == doctest::Approx(first - sum(up)));
}

TEST_CASE("layer kind names round trip") {
  for (auto k : {LayerKind::conv2d, LayerKind::tconv2d, LayerKind::maxpool2x2, LayerKind::relu, LayerKind::softmax,
                 LayerKind::concat, LayerKind::korigins})
    CHECK(layer_kind_from_string(to_string(k)) == k);
  CHECK_THROWS(layer_kind_from_string("dense"));
}
