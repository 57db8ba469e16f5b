#include <doctest.h>

#include <cmath>

#include "bro/encoder.hpp"

using namespace bro;

namespace {

Matrix random_image(Rng& rng, Index h, Index w) {
  Matrix m(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) m(y, x) = rng.uniform(0.0, 1.0);
  return m;
}

Vector flatten_params(const enc::Encoder& encoder) {
  Index n = 0;
  for (const auto& layer : encoder.layers) n += layer.weight.size() + layer.bias.size();
  Vector v(n);
  Index k = 0;
  for (const auto& layer : encoder.layers) {
    for (Index i = 0; i < layer.weight.size(); ++i) {
      v(k++) = layer.weight(i / layer.weight.cols(), i % layer.weight.cols());
    }
    for (Index i = 0; i < layer.bias.size(); ++i) v(k++) = layer.bias(i);
  }
  return v;
}

void set_params(enc::Encoder& encoder, const Vector& v) {
  Index k = 0;
  for (auto& layer : encoder.layers) {
    for (Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight(i / layer.weight.cols(), i % layer.weight.cols()) = v(k++);
    }
    for (Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = v(k++);
  }
}

}  // namespace

TEST_CASE("encoder structure and output shape") {
  const auto encoder = enc::make_encoder(32, 1);
  REQUIRE(encoder.layers.size() == 3);
  CHECK(encoder.layers[0].in_channels == 1);
  CHECK(encoder.layers[0].out_channels == 8);
  CHECK(encoder.layers[1].out_channels == 16);
  CHECK(encoder.layers[2].out_channels == 32);
  CHECK(encoder.layers[0].stride == 2);
  CHECK(encoder.layers[1].stride == 2);
  CHECK(encoder.layers[2].stride == 1);
  CHECK(encoder.out_channels() == 32);

  Rng rng(81);
  const auto acts = enc::forward(encoder, random_image(rng, 64, 64));
  CHECK(acts.output.channels == 32);
  CHECK(acts.output.height == 16);
  CHECK(acts.output.width == 16);
  CHECK(acts.output.values.minCoeff() >= 0.0);  // ReLU output

  const auto small = enc::forward(encoder, random_image(rng, 32, 48));
  CHECK(small.output.height == 8);
  CHECK(small.output.width == 12);

  CHECK_THROWS_AS(enc::forward(encoder, random_image(rng, 30, 32)), DimensionError);
  CHECK_THROWS_AS(enc::make_encoder(0, 1), ConfigError);
}

TEST_CASE("encoder init is seeded and He-scaled") {
  const auto a = enc::make_encoder(16, 5);
  const auto b = enc::make_encoder(16, 5);
  const auto c = enc::make_encoder(16, 6);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(a.layers[l].weight == b.layers[l].weight);
    CHECK(a.layers[l].bias.cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.layers[0].weight != c.layers[0].weight);

  // Sample std of layer 2's weights should be near sqrt(2 / fan_in).
  const Matrix& w = a.layers[1].weight;
  const Scalar fan_in = 8.0 * 9.0;
  const Scalar want = std::sqrt(2.0 / fan_in);
  const Scalar got = std::sqrt(w.array().square().sum() / static_cast<Scalar>(w.size()));
  CHECK(got == doctest::Approx(want).epsilon(0.15));
}

TEST_CASE("convolution against a hand-computed stencil") {
  // Single layer, 1 -> 1 channel, stride 1, known 3x3 kernel on a 4x4 ramp.
  enc::Encoder encoder;
  enc::ConvLayer layer;
  layer.in_channels = 1;
  layer.out_channels = 1;
  layer.stride = 1;
  layer.weight = Matrix::Zero(1, 9);
  layer.weight(0, 4) = 2.0;  // center tap
  layer.weight(0, 5) = 1.0;  // right neighbor
  layer.bias = Vector::Zero(1);
  encoder.layers.push_back(layer);

  Matrix img(4, 4);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) img(y, x) = static_cast<Scalar>(y * 4 + x);

  const auto acts = enc::forward(encoder, img);
  REQUIRE(acts.output.height == 4);
  // Interior pixel (1,1): 2*5 + 1*6 = 16; right edge (1,3): 2*7 + 0 (pad).
  CHECK(acts.output.at(0, 1, 1) == 16.0);
  CHECK(acts.output.at(0, 1, 3) == 14.0);
  // ReLU clips negatives.
  layer.weight(0, 4) = -2.0;
  layer.weight(0, 5) = 0.0;
  encoder.layers[0] = layer;
  const auto neg = enc::forward(encoder, img);
  CHECK(neg.output.at(0, 2, 2) == 0.0);
}

TEST_CASE("encoder backward matches finite differences") {
  Rng rng(82);
  auto encoder = enc::make_encoder(4, 3);
  const Matrix img = random_image(rng, 8, 8);

  FeatureMap w(4, 2, 2);
  for (Index c = 0; c < 4; ++c)
    for (Index p = 0; p < 4; ++p) w.values(c, p) = rng.uniform(-1.0, 1.0);

  const auto acts = enc::forward(encoder, img);
  const auto grads = enc::backward(encoder, acts, w);
  REQUIRE(grads.d_weight.size() == 3);

  const Vector theta0 = flatten_params(encoder);
  auto loss = [&](const Vector& v) {
    enc::Encoder e = encoder;
    set_params(e, v);
    return enc::forward(e, img).output.values.cwiseProduct(w.values).sum();
  };
  const Vector fd = fd_gradient_flat(loss, theta0);

  Vector analytic(theta0.size());
  Index k = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    const Matrix& dw = grads.d_weight[l];
    for (Index i = 0; i < dw.size(); ++i) analytic(k++) = dw(i / dw.cols(), i % dw.cols());
    for (Index i = 0; i < grads.d_bias[l].size(); ++i) analytic(k++) = grads.d_bias[l](i);
  }
  CHECK((analytic - fd).norm() / std::max(fd.norm(), 1e-12) < 1e-4);
}

TEST_CASE("gradient accumulation helpers") {
  const auto encoder = enc::make_encoder(4, 9);
  auto g = enc::zero_grads(encoder);
  for (const auto& dw : g.d_weight) CHECK(dw.cwiseAbs().maxCoeff() == 0.0);

  Rng rng(83);
  const Matrix img = random_image(rng, 8, 8);
  const auto acts = enc::forward(encoder, img);
  FeatureMap w = FeatureMap::zeros(4, 2, 2);
  w.values.setConstant(1.0);
  const auto once = enc::backward(encoder, acts, w);
  g += once;
  g += once;
  g.scale(0.5);
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK((g.d_weight[l] - once.d_weight[l]).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((g.d_bias[l] - once.d_bias[l]).cwiseAbs().maxCoeff() < 1e-15);
  }
}
