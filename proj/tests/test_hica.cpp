#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "bro/hica.hpp"

using namespace bro;

namespace {

FeatureMap random_map(Rng& rng, Index d, Index h, Index w) {
  FeatureMap f(d, h, w);
  for (Index c = 0; c < d; ++c)
    for (Index p = 0; p < h * w; ++p) f.values(c, p) = rng.uniform(-1.0, 1.0);
  return f;
}

Matrix random_square(Rng& rng, Index m, Scalar lo = -1.0, Scalar hi = 1.0) {
  Matrix out(m, m);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < m; ++j) out(i, j) = rng.uniform(lo, hi);
  return out;
}

}  // namespace

TEST_CASE("channel grouping concatenates neighboring channels") {
  FeatureMap f(4, 1, 2);
  for (Index c = 0; c < 4; ++c) {
    f.values(c, 0) = 10.0 * static_cast<Scalar>(c + 1);
    f.values(c, 1) = 10.0 * static_cast<Scalar>(c + 1) + 1.0;
  }
  const auto groups = hica::channel_groups(f, 2);
  REQUIRE(groups.g.rows() == 2);
  REQUIRE(groups.g.cols() == 4);
  Matrix want(2, 4);
  want << 10, 11, 20, 21, 30, 31, 40, 41;
  CHECK(groups.g == want);

  const FeatureMap back = hica::ungroup(groups);
  CHECK(back.values == f.values);
  CHECK(back.channels == 4);
  CHECK(back.height == 1);
  CHECK(back.width == 2);
}

TEST_CASE("grouping edge cases: one group and identity grouping") {
  Rng rng(21);
  const FeatureMap f = random_map(rng, 4, 2, 3);
  const auto whole = hica::channel_groups(f, 4);
  CHECK(whole.g.rows() == 1);
  CHECK(whole.g.cols() == 24);
  const auto single = hica::channel_groups(f, 1);
  CHECK(single.g == f.values);
  CHECK_THROWS_AS(hica::channel_groups(f, 3), ConfigError);
}

TEST_CASE("coarse similarity is the group Gram matrix") {
  hica::ChannelGroups g;
  g.g = Matrix::Identity(2, 2);
  g.group_size = 1;
  g.channels = 2;
  g.height = 1;
  g.width = 2;
  CHECK(hica::coarse_similarity(g) == Matrix::Identity(2, 2));

  g.g = Matrix::Ones(2, 2);
  Matrix want(2, 2);
  want << 2, 2, 2, 2;
  CHECK(hica::coarse_similarity(g) == want);

  g.g = Matrix(1, 3);
  g.g << 1, 2, 3;
  const Matrix b_c = hica::coarse_similarity(g);
  REQUIRE(b_c.rows() == 1);
  CHECK(b_c(0, 0) == 14.0);
}

TEST_CASE("coarse similarity is symmetric positive semidefinite") {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const FeatureMap f = random_map(rng, 8, 2, 2);
    const auto groups = hica::channel_groups(f, 2);
    const Matrix b_c = hica::coarse_similarity(groups);
    CHECK((b_c - b_c.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(b_c);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("uniform fine similarity from zero inputs") {
  hica::MeanOffset offset;
  offset.b_delta = Matrix::Zero(2, 2);
  offset.alpha = 1.0;
  const auto fine = hica::fine_similarity(Matrix::Zero(2, 2), offset, 1.0);
  CHECK(fine.b_f(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(fine.b_f(1, 1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("fine similarity matches direct exp-normalize evaluation") {
  Matrix b_c(2, 2);
  b_c << 2, 0, 0, 2;
  hica::MeanOffset offset;
  offset.b_delta = Matrix::Identity(2, 2);
  offset.alpha = 1.0;
  const Scalar g_norm = 1.7;
  const auto fine = hica::fine_similarity(b_c, offset, g_norm);
  const Scalar s = g_norm * g_norm * std::sqrt(2.0);
  CHECK(fine.scale == doctest::Approx(s).epsilon(1e-15));
  const Scalar z = std::exp(3.0 / s) + std::exp(0.0);
  CHECK(fine.b_f(0, 0) == doctest::Approx(std::exp(3.0 / s) / z).epsilon(1e-14));
  CHECK(fine.b_f(0, 1) == doctest::Approx(1.0 / z).epsilon(1e-14));
}

TEST_CASE("diagonal-dominant symmetric coarse input keeps diagonal symmetry") {
  Matrix b_c = Matrix::Zero(3, 3);
  b_c.diagonal().setConstant(4.0);
  hica::MeanOffset offset;
  offset.b_delta = Matrix::Zero(3, 3);
  offset.alpha = 0.0;
  const auto fine = hica::fine_similarity(b_c, offset, 2.0);
  for (Index i = 0; i < 3; ++i) {
    CHECK(std::abs(fine.b_f.row(i).sum() - 1.0) < 1e-12);
    CHECK(fine.b_f(i, i) == doctest::Approx(fine.b_f(0, 0)).epsilon(1e-14));
  }
}

TEST_CASE("fine similarity is row-stochastic and strictly positive") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix b_c = random_square(rng, 4, -2.0, 2.0);
    hica::MeanOffset offset;
    offset.b_delta = random_square(rng, 4);
    offset.alpha = 0.2;
    const auto fine = hica::fine_similarity(b_c, offset, rng.uniform(0.5, 3.0));
    for (Index i = 0; i < 4; ++i) {
      CHECK(std::abs(fine.b_f.row(i).sum() - 1.0) < 1e-12);
      CHECK(fine.b_f.row(i).minCoeff() > 0.0);
    }
  }
}

TEST_CASE("outside placement divides the softmax output") {
  Rng rng(24);
  const Matrix b_c = random_square(rng, 3);
  hica::MeanOffset offset;
  offset.b_delta = random_square(rng, 3);
  offset.alpha = 0.2;
  const Scalar g_norm = 1.3;
  const auto inside = hica::fine_similarity(b_c, offset, g_norm, hica::NormPlacement::Inside);
  const auto outside = hica::fine_similarity(b_c, offset, g_norm, hica::NormPlacement::Outside);
  CHECK(outside.scale == doctest::Approx(inside.scale).epsilon(1e-15));
  // Outside the softmax the rows sum to 1/s, not 1.
  for (Index i = 0; i < 3; ++i) {
    CHECK(std::abs(outside.b_f.row(i).sum() - 1.0 / outside.scale) < 1e-12);
  }
}

TEST_CASE("fine similarity rejects degenerate inputs") {
  hica::MeanOffset offset;
  offset.b_delta = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(hica::fine_similarity(Matrix::Zero(2, 2), offset, 0.0), DegenerateInput);
  offset.b_delta = Matrix::Zero(3, 3);
  CHECK_THROWS_AS(hica::fine_similarity(Matrix::Zero(2, 2), offset, 1.0), DimensionError);
  CHECK_THROWS_AS(hica::fine_similarity(Matrix::Zero(2, 3), offset, 1.0), DimensionError);
}

TEST_CASE("offset norm floor keeps the zero-offset start finite") {
  Rng rng(25);
  const Matrix b_c = random_square(rng, 3);
  hica::MeanOffset offset;
  offset.b_delta = Matrix::Zero(3, 3);
  offset.alpha = 0.2;
  const auto fine = hica::fine_similarity(b_c, offset, 1.0);
  CHECK(fine.scale == doctest::Approx(hica::kOffsetNormFloor).epsilon(1e-15));
  CHECK(fine.b_f.allFinite());
}

TEST_CASE("identity attention fuses to the input map") {
  Rng rng(26);
  const FeatureMap f = random_map(rng, 4, 1, 2);
  const auto groups = hica::channel_groups(f, 2);
  hica::FineSimilarity fine;
  fine.b_f = Matrix::Identity(2, 2);
  const FeatureMap fused = hica::fuse(fine, groups);
  CHECK(fused.values == f.values);
  CHECK(fused.channels == 4);
  CHECK(fused.height == 1);
  CHECK(fused.width == 2);
}

TEST_CASE("permutation attention permutes the groups") {
  Rng rng(27);
  const FeatureMap f = random_map(rng, 4, 1, 3);
  const auto groups = hica::channel_groups(f, 2);
  hica::FineSimilarity fine;
  fine.b_f = Matrix::Zero(2, 2);
  fine.b_f(0, 1) = 1.0;
  fine.b_f(1, 0) = 1.0;
  const FeatureMap fused = hica::fuse(fine, groups);
  // Group 0 is channels {0,1}; group 1 is channels {2,3}; the swap moves them.
  CHECK(fused.values.row(0) == f.values.row(2));
  CHECK(fused.values.row(1) == f.values.row(3));
  CHECK(fused.values.row(2) == f.values.row(0));
  CHECK(fused.values.row(3) == f.values.row(1));
}

TEST_CASE("adversarial loss oracle values") {
  CHECK(hica::adversarial_loss(Matrix::Identity(5, 5)) == 0.0);
  CHECK(hica::adversarial_loss(Matrix::Zero(3, 3)) == 3.0);
  Matrix b(2, 2);
  b << 1, 1, 0, 1;
  CHECK(hica::adversarial_loss(b) == 1.0);
}

TEST_CASE("adversarial loss is zero only at the identity") {
  Rng rng(28);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix m = Matrix::Identity(4, 4);
    const Index i = static_cast<Index>(rng.below(4));
    const Index j = static_cast<Index>(rng.below(4));
    const Scalar eps = rng.uniform(1e-6, 1.0) * (rng.below(2) ? 1.0 : -1.0);
    m(i, j) += eps;
    CHECK(hica::adversarial_loss(m) > 0.0);
  }
}

TEST_CASE("adversarial loss gradient matches finite differences") {
  Rng rng(29);
  const Matrix b = random_square(rng, 4);
  const Matrix analytic = hica::adversarial_loss_backward(b);
  auto loss = [&](const Vector& v) {
    Matrix m(4, 4);
    for (Index i = 0; i < 16; ++i) m(i / 4, i % 4) = v(i);
    return hica::adversarial_loss(m);
  };
  Vector flat(16);
  for (Index i = 0; i < 16; ++i) flat(i) = b(i / 4, i % 4);
  const Vector fd = fd_gradient_flat(loss, flat);
  for (Index i = 0; i < 16; ++i) {
    CHECK(analytic(i / 4, i % 4) == doctest::Approx(fd(i)).epsilon(1e-6));
  }
}

TEST_CASE("offset gradient through fine similarity matches finite differences") {
  Rng rng(30);
  for (int trial = 0; trial < 5; ++trial) {
    const Index m = 2 + static_cast<Index>(rng.below(3));
    const Matrix b_c = random_square(rng, m, -2.0, 2.0);
    const Matrix delta0 = random_square(rng, m);
    const Scalar g_norm = rng.uniform(0.5, 2.0);
    const Scalar alpha = 0.2;

    auto loss = [&](const Vector& v) {
      hica::MeanOffset offset;
      offset.b_delta = Matrix(m, m);
      for (Index i = 0; i < m * m; ++i) offset.b_delta(i / m, i % m) = v(i);
      offset.alpha = alpha;
      return hica::adversarial_loss(hica::fine_similarity(b_c, offset, g_norm).b_f);
    };
    Vector flat(m * m);
    for (Index i = 0; i < m * m; ++i) flat(i) = delta0(i / m, i % m);
    const Vector fd = fd_gradient_flat(loss, flat);

    hica::MeanOffset offset;
    offset.b_delta = delta0;
    offset.alpha = alpha;
    const auto fine = hica::fine_similarity(b_c, offset, g_norm);
    const auto grads =
        hica::fine_similarity_backward(fine, hica::adversarial_loss_backward(fine.b_f));
    Vector analytic(m * m);
    for (Index i = 0; i < m * m; ++i) analytic(i) = grads.d_b_delta(i / m, i % m);
    CHECK((analytic - fd).norm() / std::max(fd.norm(), 1e-12) < 1e-4);
  }
}

TEST_CASE("coarse and norm gradients through fine similarity match finite differences") {
  Rng rng(31);
  const Index m = 3;
  const Matrix b_c0 = random_square(rng, m, -2.0, 2.0);
  const Matrix delta0 = random_square(rng, m);
  const Scalar g_norm0 = 1.4;
  hica::MeanOffset offset;
  offset.b_delta = delta0;
  offset.alpha = 0.2;
  const Matrix w = random_square(rng, m);

  const auto fine = hica::fine_similarity(b_c0, offset, g_norm0);
  const auto grads = hica::fine_similarity_backward(fine, w);

  auto loss_bc = [&](const Vector& v) {
    Matrix b_c(m, m);
    for (Index i = 0; i < m * m; ++i) b_c(i / m, i % m) = v(i);
    return hica::fine_similarity(b_c, offset, g_norm0).b_f.cwiseProduct(w).sum();
  };
  Vector flat(m * m);
  for (Index i = 0; i < m * m; ++i) flat(i) = b_c0(i / m, i % m);
  const Vector fd_bc = fd_gradient_flat(loss_bc, flat);
  Vector an_bc(m * m);
  for (Index i = 0; i < m * m; ++i) an_bc(i) = grads.d_b_c(i / m, i % m);
  CHECK((an_bc - fd_bc).norm() / std::max(fd_bc.norm(), 1e-12) < 1e-4);

  auto loss_norm = [&](const Vector& v) {
    return hica::fine_similarity(b_c0, offset, v(0)).b_f.cwiseProduct(w).sum();
  };
  const Vector fd_norm = fd_gradient_flat(loss_norm, Vector::Constant(1, g_norm0));
  CHECK(grads.d_g_norm == doctest::Approx(fd_norm(0)).epsilon(1e-5));
}

TEST_CASE("fuse backward matches finite differences") {
  Rng rng(32);
  const FeatureMap f = random_map(rng, 4, 2, 2);
  const auto groups = hica::channel_groups(f, 2);
  hica::FineSimilarity fine;
  fine.b_f = random_square(rng, 2);
  FeatureMap w = random_map(rng, 4, 2, 2);

  const auto grads = hica::fuse_backward(fine, groups, w);

  auto loss_bf = [&](const Vector& v) {
    hica::FineSimilarity fs;
    fs.b_f = Matrix(2, 2);
    for (Index i = 0; i < 4; ++i) fs.b_f(i / 2, i % 2) = v(i);
    return hica::fuse(fs, groups).values.cwiseProduct(w.values).sum();
  };
  Vector flat_bf(4);
  for (Index i = 0; i < 4; ++i) flat_bf(i) = fine.b_f(i / 2, i % 2);
  const Vector fd_bf = fd_gradient_flat(loss_bf, flat_bf);
  for (Index i = 0; i < 4; ++i) {
    CHECK(grads.d_b_f(i / 2, i % 2) == doctest::Approx(fd_bf(i)).epsilon(1e-6));
  }

  auto loss_g = [&](const Vector& v) {
    hica::ChannelGroups gg = groups;
    for (Index i = 0; i < v.size(); ++i) gg.g(i / gg.g.cols(), i % gg.g.cols()) = v(i);
    return hica::fuse(fine, gg).values.cwiseProduct(w.values).sum();
  };
  Vector flat_g(groups.g.size());
  for (Index i = 0; i < flat_g.size(); ++i) {
    flat_g(i) = groups.g(i / groups.g.cols(), i % groups.g.cols());
  }
  const Vector fd_g = fd_gradient_flat(loss_g, flat_g);
  Vector an_g(flat_g.size());
  for (Index i = 0; i < flat_g.size(); ++i) {
    an_g(i) = grads.d_g(i / groups.g.cols(), i % groups.g.cols());
  }
  CHECK((an_g - fd_g).norm() / std::max(fd_g.norm(), 1e-12) < 1e-4);
}

TEST_CASE("alpha zero reduces to pure self-cross attention") {
  Rng rng(33);
  const Matrix b_c = random_square(rng, 4, -2.0, 2.0);
  hica::MeanOffset with_offset;
  with_offset.b_delta = random_square(rng, 4);
  with_offset.alpha = 0.0;
  hica::MeanOffset other_offset;
  other_offset.b_delta = random_square(rng, 4);
  other_offset.alpha = 0.0;
  // With alpha = 0 the offset still sets the temperature through its norm, so
  // compare two offsets of equal norm: b_f must agree exactly.
  other_offset.b_delta *= frobenius_norm(with_offset.b_delta) / frobenius_norm(other_offset.b_delta);
  const auto a = hica::fine_similarity(b_c, with_offset, 1.1);
  const auto b = hica::fine_similarity(b_c, other_offset, 1.1);
  CHECK((a.b_f - b.b_f).cwiseAbs().maxCoeff() < 1e-12);
}
