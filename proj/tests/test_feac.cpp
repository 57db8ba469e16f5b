#include <doctest.h>

#include <cmath>

#include "bro/feac.hpp"

using namespace bro;

namespace {

FeatureMap random_map(Rng& rng, Index d, Index h, Index w, Scalar lo = -1.0, Scalar hi = 1.0) {
  FeatureMap f(d, h, w);
  for (Index c = 0; c < d; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) f.at(c, y, x) = rng.uniform(lo, hi);
  return f;
}

Vector flatten(const FeatureMap& f) {
  Vector v(f.channels * f.pixels());
  Index k = 0;
  for (Index c = 0; c < f.channels; ++c)
    for (Index p = 0; p < f.pixels(); ++p) v(k++) = f.values(c, p);
  return v;
}

FeatureMap unflatten(const Vector& v, Index d, Index h, Index w) {
  FeatureMap f(d, h, w);
  Index k = 0;
  for (Index c = 0; c < d; ++c)
    for (Index p = 0; p < h * w; ++p) f.values(c, p) = v(k++);
  return f;
}

}  // namespace

TEST_CASE("single scalar calibration") {
  FeatureMap f_s(1, 1, 1), f_q(1, 1, 1);
  f_s.at(0, 0, 0) = 2.0;
  f_q.at(0, 0, 0) = 3.0;
  const auto cal = feac::calibrate(f_s, f_q);
  CHECK(cal.attention.rows() == 1);
  CHECK(cal.attention(0, 0) == 1.0);
  CHECK(cal.calibrated.at(0, 0, 0) == doctest::Approx(2.0 / 6.0 + 2.0).epsilon(1e-15));
}

TEST_CASE("single pixel general form") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const FeatureMap f_s = random_map(rng, 5, 1, 1);
    const FeatureMap f_q = random_map(rng, 5, 1, 1);
    const auto cal = feac::calibrate(f_s, f_q);
    const Scalar factor = 1.0 + 1.0 / (cal.norm_s * cal.norm_q);
    for (Index c = 0; c < 5; ++c) {
      CHECK(cal.calibrated.at(c, 0, 0) ==
            doctest::Approx(f_s.at(c, 0, 0) * factor).epsilon(1e-12));
    }
  }
}

TEST_CASE("output shape follows the support input") {
  Rng rng(12);
  const FeatureMap f_s = random_map(rng, 4, 3, 3);
  const FeatureMap f_q = random_map(rng, 4, 3, 3);
  const auto cal = feac::calibrate(f_s, f_q);
  CHECK(cal.calibrated.channels == 4);
  CHECK(cal.calibrated.height == 3);
  CHECK(cal.calibrated.width == 3);
}

TEST_CASE("attention is row-stochastic") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap f_s = random_map(rng, 3, 2, 3, -4.0, 4.0);
    const FeatureMap f_q = random_map(rng, 3, 2, 3, -4.0, 4.0);
    const auto cal = feac::calibrate(f_s, f_q);
    for (Index i = 0; i < cal.attention.rows(); ++i) {
      CHECK(std::abs(cal.attention.row(i).sum() - 1.0) < 1e-12);
      CHECK(cal.attention.row(i).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("attention term obeys the residual-dominance bound") {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const FeatureMap f_s = random_map(rng, 4, 3, 3);
    const FeatureMap f_q = random_map(rng, 4, 3, 3);
    const auto cal = feac::calibrate(f_s, f_q);
    const Scalar term = frobenius_norm(Matrix(cal.calibrated.values - f_s.values));
    CHECK(term <= cal.norm_s * cal.norm_s / (cal.norm_s * cal.norm_q) + 1e-12);
  }
}

TEST_CASE("attention term shrinks as 1/t under input scaling") {
  Rng rng(15);
  const FeatureMap base_s = random_map(rng, 3, 2, 2);
  const FeatureMap base_q = random_map(rng, 3, 2, 2);
  Scalar prev = -1.0;
  for (const Scalar t : {1.0, 10.0, 100.0, 1000.0}) {
    FeatureMap f_s = base_s, f_q = base_q;
    f_s.values *= t;
    f_q.values *= t;
    const auto cal = feac::calibrate(f_s, f_q);
    const Scalar term = frobenius_norm(Matrix(cal.calibrated.values - f_s.values));
    if (prev >= 0.0) CHECK(term < prev);
    prev = term;
  }
  CHECK(prev < 1e-2);
}

TEST_CASE("degenerate and mismatched inputs are rejected") {
  Rng rng(16);
  const FeatureMap f = random_map(rng, 2, 2, 2);
  CHECK_THROWS_AS(feac::calibrate(FeatureMap::zeros(2, 2, 2), f), DegenerateInput);
  CHECK_THROWS_AS(feac::calibrate(f, FeatureMap::zeros(2, 2, 2)), DegenerateInput);
  CHECK_THROWS_AS(feac::calibrate(f, random_map(rng, 2, 3, 2)), DimensionError);
  CHECK_THROWS_AS(feac::calibrate(f, random_map(rng, 3, 2, 2)), DimensionError);
}

TEST_CASE("calibrate gradients match finite differences") {
  Rng rng(17);
  for (const Index d : {2, 4}) {
    const Index h = d == 2 ? 2 : 4, w = d == 2 ? 3 : 4;
    const FeatureMap f_s0 = random_map(rng, d, h, w);
    const FeatureMap f_q0 = random_map(rng, d, h, w);
    FeatureMap weight = random_map(rng, d, h, w);

    const auto fwd = feac::calibrate(f_s0, f_q0);
    const auto grads = feac::calibrate_backward(fwd, weight);

    auto loss_s = [&](const Vector& v) {
      return feac::calibrate(unflatten(v, d, h, w), f_q0)
          .calibrated.values.cwiseProduct(weight.values)
          .sum();
    };
    auto loss_q = [&](const Vector& v) {
      return feac::calibrate(f_s0, unflatten(v, d, h, w))
          .calibrated.values.cwiseProduct(weight.values)
          .sum();
    };
    const Vector fd_s = fd_gradient_flat(loss_s, flatten(f_s0));
    const Vector fd_q = fd_gradient_flat(loss_q, flatten(f_q0));
    const Vector an_s = flatten(grads.d_support);
    const Vector an_q = flatten(grads.d_query);
    CHECK((an_s - fd_s).norm() / std::max(fd_s.norm(), 1e-12) < 1e-4);
    CHECK((an_q - fd_q).norm() / std::max(fd_q.norm(), 1e-12) < 1e-4);
  }
}
