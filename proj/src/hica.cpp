#include "bro/hica.hpp"

#include <cmath>
#include <string>

namespace bro::hica {

ChannelGroups channel_groups(const FeatureMap& f, Index n) {
  if (n <= 0 || f.channels % n != 0) {
    throw ConfigError("channel_groups: group size " + std::to_string(n) +
                      " does not divide channel count " + std::to_string(f.channels));
  }
  ChannelGroups out;
  out.group_size = n;
  out.channels = f.channels;
  out.height = f.height;
  out.width = f.width;
  const Index pixels = f.pixels();
  const Index rows = f.channels / n;
  out.g.resize(rows, pixels * n);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < n; ++j) {
      out.g.row(i).segment(j * pixels, pixels) = f.values.row(i * n + j);
    }
  }
  return out;
}

FeatureMap ungroup(const ChannelGroups& g) {
  FeatureMap out = FeatureMap::zeros(g.channels, g.height, g.width);
  const Index pixels = out.pixels();
  for (Index i = 0; i < g.g.rows(); ++i) {
    for (Index j = 0; j < g.group_size; ++j) {
      out.values.row(i * g.group_size + j) = g.g.row(i).segment(j * pixels, pixels);
    }
  }
  return out;
}

Matrix coarse_similarity(const ChannelGroups& g) {
  return matmul(g.g, g.g.transpose());
}

FineSimilarity fine_similarity(const Matrix& b_c, const MeanOffset& offset, Scalar g_norm,
                               NormPlacement placement) {
  if (b_c.rows() != b_c.cols()) {
    throw DimensionError("fine_similarity: coarse similarity must be square, got " +
                         shape_string(b_c.rows(), b_c.cols()));
  }
  if (offset.b_delta.rows() != b_c.rows() || offset.b_delta.cols() != b_c.cols()) {
    throw DimensionError("fine_similarity: offset shape " +
                         shape_string(offset.b_delta.rows(), offset.b_delta.cols()) +
                         " does not match similarity shape " +
                         shape_string(b_c.rows(), b_c.cols()));
  }
  if (!(g_norm > 0)) {
    throw DegenerateInput("fine_similarity: group matrix norm must be positive");
  }
  FineSimilarity out;
  out.b_c = b_c;
  out.b_delta = offset.b_delta;
  out.g_norm = g_norm;
  out.alpha = offset.alpha;
  out.placement = placement;
  out.offset_norm = frobenius_norm(offset.b_delta);
  out.scale = g_norm * g_norm * std::max(out.offset_norm, kOffsetNormFloor);
  Matrix adjusted = b_c + offset.alpha * offset.b_delta;
  if (placement == NormPlacement::Inside) {
    out.softmax_arg = adjusted / out.scale;
    out.softmax_out = softmax_rows(out.softmax_arg);
    out.b_f = out.softmax_out;
  } else {
    out.softmax_arg = adjusted;
    out.softmax_out = softmax_rows(out.softmax_arg);
    out.b_f = out.softmax_out / out.scale;
  }
  return out;
}

FineSimilarityGrads fine_similarity_backward(const FineSimilarity& fwd, const Matrix& d_b_f) {
  FineSimilarityGrads grads;
  Scalar d_scale = 0;
  Matrix d_arg;
  if (fwd.placement == NormPlacement::Inside) {
    Matrix d_z = softmax_rows_backward(fwd.softmax_out, d_b_f);
    // softmax_arg = (b_c + alpha * b_delta) / scale
    grads.d_b_c = d_z / fwd.scale;
    grads.d_b_delta = (fwd.alpha / fwd.scale) * d_z;
    d_scale = -d_z.cwiseProduct(fwd.softmax_arg).sum() / fwd.scale;
  } else {
    // b_f = softmax(b_c + alpha * b_delta) / scale
    d_scale = -d_b_f.cwiseProduct(fwd.softmax_out).sum() / (fwd.scale * fwd.scale);
    Matrix d_z = softmax_rows_backward(fwd.softmax_out, d_b_f / fwd.scale);
    grads.d_b_c = d_z;
    grads.d_b_delta = fwd.alpha * d_z;
  }
  // scale = g_norm^2 * max(offset_norm, floor)
  grads.d_g_norm = d_scale * 2 * fwd.scale / fwd.g_norm;
  if (fwd.offset_norm > kOffsetNormFloor) {
    grads.d_b_delta += (d_scale * fwd.g_norm * fwd.g_norm / fwd.offset_norm) * fwd.b_delta;
  }
  return grads;
}

FeatureMap fuse(const FineSimilarity& b_f, const ChannelGroups& g) {
  if (b_f.b_f.cols() != g.g.rows()) {
    throw DimensionError("fuse: similarity shape " + shape_string(b_f.b_f.rows(), b_f.b_f.cols()) +
                         " does not match group count " + std::to_string(g.g.rows()));
  }
  ChannelGroups fused = g;
  fused.g = matmul(b_f.b_f, g.g);
  return ungroup(fused);
}

FuseGrads fuse_backward(const FineSimilarity& b_f, const ChannelGroups& g,
                        const FeatureMap& d_fused) {
  ChannelGroups d_groups = channel_groups(d_fused, g.group_size);
  FuseGrads grads;
  grads.d_b_f = matmul(d_groups.g, g.g.transpose());
  grads.d_g = matmul(b_f.b_f.transpose(), d_groups.g);
  return grads;
}

Scalar adversarial_loss(const Matrix& b_f) {
  if (b_f.rows() != b_f.cols()) {
    throw DimensionError("adversarial_loss: matrix must be square, got " +
                         shape_string(b_f.rows(), b_f.cols()));
  }
  Scalar loss = 0;
  for (Index i = 0; i < b_f.rows(); ++i) {
    for (Index k = 0; k < b_f.cols(); ++k) {
      const Scalar target = (i == k) ? 1.0 : 0.0;
      const Scalar diff = b_f(i, k) - target;
      loss += diff * diff;
    }
  }
  return loss;
}

Matrix adversarial_loss_backward(const Matrix& b_f) {
  Matrix grad = 2 * b_f;
  grad.diagonal().array() -= 2;
  return grad;
}

}  // namespace bro::hica
