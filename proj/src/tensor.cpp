#include "bro/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bro {

namespace {

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in) throw IoError("tensor stream truncated");
}

// Serialized little-endian; this code targets little-endian hosts.
void put_u32(std::ostream& out, std::uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::ostream& out, std::uint64_t v) { put_bytes(out, &v, 8); }

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v;
  get_bytes(in, &v, 4);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v;
  get_bytes(in, &v, 8);
  return v;
}

}  // namespace

Tensor::Tensor(std::vector<std::uint64_t> s, Vector d) : shape(std::move(s)), data(std::move(d)) {
  if (size() != static_cast<std::uint64_t>(data.size()))
    throw DimensionError("tensor data length does not match shape product");
}

std::uint64_t Tensor::size() const {
  std::uint64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor Tensor::zeros(std::vector<std::uint64_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = Vector::Zero(static_cast<Index>(t.size()));
  return t;
}

Tensor tensor_from_matrix(const Matrix& m) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data = Eigen::Map<const Vector>(m.data(), m.size());
  return t;
}

Matrix matrix_from_tensor(const Tensor& t) {
  if (t.shape.size() != 2) throw DimensionError("matrix_from_tensor: tensor rank is not 2");
  return Eigen::Map<const Matrix>(t.data.data(), static_cast<Index>(t.shape[0]),
                                  static_cast<Index>(t.shape[1]));
}

void save_tensor(std::ostream& out, const Tensor& t) {
  put_bytes(out, "BROT", 4);
  char version = 1;
  put_bytes(out, &version, 1);
  put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto e : t.shape) put_u64(out, e);
  put_bytes(out, t.data.data(), sizeof(Scalar) * static_cast<std::size_t>(t.data.size()));
  if (!out) throw IoError("tensor write failed");
}

Tensor load_tensor(std::istream& in) {
  char magic[4];
  get_bytes(in, magic, 4);
  if (std::memcmp(magic, "BROT", 4) != 0) throw IoError("bad tensor magic; expected BROT");
  char version;
  get_bytes(in, &version, 1);
  if (version != 1) throw IoError("unsupported tensor version " + std::to_string(version));
  std::uint32_t rank = get_u32(in);
  if (rank > 32) throw IoError("implausible tensor rank " + std::to_string(rank));
  Tensor t;
  t.shape.resize(rank);
  std::uint64_t n = 1;
  for (auto& e : t.shape) {
    e = get_u64(in);
    if (e == 0) throw IoError("zero extent in tensor shape");
    n *= e;
  }
  if (n > (1ull << 31)) throw IoError("tensor too large");
  t.data.resize(static_cast<Index>(n));
  get_bytes(in, t.data.data(), sizeof(Scalar) * n);
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path);
  save_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for read: " + path);
  return load_tensor(in);
}

std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "(" << rows << "x" << cols << ")";
  return os.str();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions disagree: " + shape_string(a.rows(), a.cols()) +
                         " vs " + shape_string(b.rows(), b.cols()));
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index k = 0; k < a.cols(); ++k) {
      const Scalar av = a(i, k);
      for (Index j = 0; j < b.cols(); ++j) out(i, j) += av * b(k, j);
    }
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    const Scalar mx = m.row(i).maxCoeff();
    out.row(i) = (m.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Matrix softmax_rows_backward(const Matrix& y, const Matrix& grad_y) {
  if (y.rows() != grad_y.rows() || y.cols() != grad_y.cols())
    throw DimensionError("softmax_rows_backward: shape mismatch");
  Matrix out(y.rows(), y.cols());
  for (Index i = 0; i < y.rows(); ++i) {
    const Scalar dot = y.row(i).cwiseProduct(grad_y.row(i)).sum();
    out.row(i) = (y.row(i).array() * (grad_y.row(i).array() - dot)).matrix();
  }
  return out;
}

Scalar frobenius_norm(const Matrix& m) { return std::sqrt(m.array().square().sum()); }

FeatureMap::FeatureMap(Index d, Index h, Index w)
    : channels(d), height(h), width(w), values(d, h * w) {}

FeatureMap FeatureMap::zeros(Index d, Index h, Index w) {
  FeatureMap f(d, h, w);
  f.values.setZero();
  return f;
}

FeatureMap feature_map_from_tensor(const Tensor& t) {
  if (t.shape.size() != 3) throw DimensionError("feature_map_from_tensor: tensor rank is not 3");
  FeatureMap f(static_cast<Index>(t.shape[0]), static_cast<Index>(t.shape[1]),
               static_cast<Index>(t.shape[2]));
  f.values = Eigen::Map<const Matrix>(t.data.data(), f.channels, f.pixels());
  return f;
}

Tensor tensor_from_feature_map(const FeatureMap& f) {
  Tensor t;
  t.shape = {static_cast<std::uint64_t>(f.channels), static_cast<std::uint64_t>(f.height),
             static_cast<std::uint64_t>(f.width)};
  t.data = Eigen::Map<const Vector>(f.values.data(), f.values.size());
  return t;
}

Matrix to_pixel_rows(const FeatureMap& f) { return f.values.transpose(); }

Matrix to_channel_rows(const FeatureMap& f) { return f.values; }

FeatureMap from_pixel_rows(const Matrix& m, Index height, Index width) {
  if (m.rows() != height * width)
    throw DimensionError("from_pixel_rows: row count " + std::to_string(m.rows()) +
                         " is not height*width = " + std::to_string(height * width));
  FeatureMap f(m.cols(), height, width);
  f.values = m.transpose();
  return f;
}

FeatureMap from_channel_rows(const Matrix& m, Index height, Index width) {
  if (m.cols() != height * width)
    throw DimensionError("from_channel_rows: column count " + std::to_string(m.cols()) +
                         " is not height*width = " + std::to_string(height * width));
  FeatureMap f(m.rows(), height, width);
  f.values = m;
  return f;
}

Tensor regroup(const Tensor& t, RegroupMode mode, Index height, Index width) {
  switch (mode) {
    case RegroupMode::ToPixelRows:
      return tensor_from_matrix(to_pixel_rows(feature_map_from_tensor(t)));
    case RegroupMode::ToChannelRows:
      return tensor_from_matrix(to_channel_rows(feature_map_from_tensor(t)));
    case RegroupMode::Inverse: {
      if (height <= 0 || width <= 0)
        throw DimensionError("regroup inverse: height and width are required");
      return tensor_from_feature_map(from_channel_rows(matrix_from_tensor(t), height, width));
    }
  }
  throw Error("unreachable regroup mode");
}

Tensor fd_gradient(const std::function<Scalar(const Tensor&)>& f, const Tensor& x, Scalar h) {
  if (h <= 0) throw ConfigError("fd_gradient: step must be positive");
  Tensor grad = Tensor::zeros(x.shape);
  Tensor probe = x;
  for (Index i = 0; i < x.data.size(); ++i) {
    const Scalar saved = probe.data[i];
    probe.data[i] = saved + h;
    const Scalar up = f(probe);
    probe.data[i] = saved - h;
    const Scalar down = f(probe);
    probe.data[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error("fd_gradient: non-finite function evaluation at coordinate " +
                  std::to_string(i));
    grad.data[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Vector fd_gradient_flat(const std::function<Scalar(const Vector&)>& f, const Vector& x, Scalar h) {
  Tensor xt;
  xt.shape = {static_cast<std::uint64_t>(x.size())};
  xt.data = x;
  Tensor g = fd_gradient([&](const Tensor& t) { return f(t.data); }, xt, h);
  return g.data;
}

}  // namespace bro
