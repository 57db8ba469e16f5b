#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bro/common.hpp"

namespace bro {

/// Dense n-dimensional array, 64-bit, row-major. The exchange type for file
/// io, checkpoints and finite-difference probing; the algebra below works on
/// Matrix views.
struct Tensor {
  std::vector<std::uint64_t> shape;
  Vector data;  // flattened, row-major

  Tensor() = default;
  Tensor(std::vector<std::uint64_t> s, Vector d);

  std::uint64_t size() const;
  static Tensor zeros(std::vector<std::uint64_t> shape);
};

Tensor tensor_from_matrix(const Matrix& m);
Matrix matrix_from_tensor(const Tensor& t);

// Binary tensor format: magic "BROT", version byte 1, u32 LE rank,
// rank x u64 LE extents, row-major f64 LE payload.
void save_tensor(std::ostream& out, const Tensor& t);
Tensor load_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// Matrix product with an oracle-exact summation order (plain k-ordered
/// accumulation per coefficient). Throws DimensionError naming both shapes
/// when the inner dimensions disagree.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Row-wise softmax with max-subtraction. Each output row is nonnegative and
/// sums to 1.
Matrix softmax_rows(const Matrix& m);

/// Backward of softmax_rows: y = softmax_rows(x), returns dL/dx given dL/dy.
Matrix softmax_rows_backward(const Matrix& y, const Matrix& grad_y);

Scalar frobenius_norm(const Matrix& m);

/// Feature map with channels as rows of a D x (H*W) matrix. Flattening that
/// matrix row-major is exactly the row-major [D,H,W] tensor layout.
struct FeatureMap {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Matrix values;  // channels x (height*width)

  FeatureMap() = default;
  FeatureMap(Index d, Index h, Index w);
  static FeatureMap zeros(Index d, Index h, Index w);

  Index pixels() const { return height * width; }
  Scalar& at(Index c, Index y, Index x) { return values(c, y * width + x); }
  Scalar at(Index c, Index y, Index x) const { return values(c, y * width + x); }
};

FeatureMap feature_map_from_tensor(const Tensor& t);
Tensor tensor_from_feature_map(const FeatureMap& f);

// Regrouping between the [D,H,W] layout and its two matrix views. All of
// these copy without arithmetic, so round trips are bit-exact.
Matrix to_pixel_rows(const FeatureMap& f);    // (H*W) x D
Matrix to_channel_rows(const FeatureMap& f);  // D x (H*W)
FeatureMap from_pixel_rows(const Matrix& m, Index height, Index width);
FeatureMap from_channel_rows(const Matrix& m, Index height, Index width);

enum class RegroupMode { ToPixelRows, ToChannelRows, Inverse };

/// Tensor-level regroup. ToPixelRows/ToChannelRows expect rank 3; Inverse
/// expects the rank-2 channel-rows form plus the (height, width) split that a
/// bare matrix cannot recover.
Tensor regroup(const Tensor& t, RegroupMode mode, Index height = -1, Index width = -1);

/// Central-difference gradient of a scalar function, (f(x+h*e_i) - f(x-h*e_i))
/// / (2h) per coordinate. Non-finite evaluations of f are propagated as
/// errors.
Tensor fd_gradient(const std::function<Scalar(const Tensor&)>& f, const Tensor& x,
                   Scalar h = 1e-5);

/// Same probe for flat coefficient vectors; used by the gradient test suites.
Vector fd_gradient_flat(const std::function<Scalar(const Vector&)>& f, const Vector& x,
                        Scalar h = 1e-5);

std::string shape_string(Index rows, Index cols);

}  // namespace bro
