#include "bro/prototypes.hpp"

#include <algorithm>
#include <cmath>

namespace bro::proto {

namespace {

void check_mask_shape(const FeatureMap& f, const Mask& m, const char* where) {
  if (m.rows() != f.height || m.cols() != f.width) {
    throw DimensionError(std::string(where) + ": mask shape " + shape_string(m.rows(), m.cols()) +
                         " does not match feature map " + shape_string(f.height, f.width));
  }
}

Prototype pool_region(const FeatureMap& f, const Mask& m, Kind kind, Origin origin, Index row0,
                      Index col0, Index rows, Index cols) {
  Prototype p;
  p.kind = kind;
  p.origin = origin;
  p.row0 = row0;
  p.col0 = col0;
  p.rows = rows;
  p.cols = cols;
  p.vector = Vector::Zero(f.channels);
  for (Index y = row0; y < row0 + rows; ++y) {
    for (Index x = col0; x < col0 + cols; ++x) {
      if (m(y, x) != 0) {
        p.vector += f.values.col(y * f.width + x);
        ++p.active;
      }
    }
  }
  if (p.active > 0) p.vector /= static_cast<Scalar>(p.active);
  return p;
}

}  // namespace

Prototype masked_avg_pool(const FeatureMap& f, const Mask& m, Kind kind) {
  check_mask_shape(f, m, "masked_avg_pool");
  Prototype p = pool_region(f, m, kind, Origin::GlobalMap, 0, 0, f.height, f.width);
  if (p.active == 0) {
    throw DegenerateInput("masked_avg_pool: mask has no active pixels");
  }
  return p;
}

void masked_avg_pool_backward_into(const Prototype& p, const Mask& m, const Vector& d_prototype,
                                   FeatureMap& grad) {
  if (p.active == 0) return;
  const Vector share = d_prototype / static_cast<Scalar>(p.active);
  for (Index y = p.row0; y < p.row0 + p.rows; ++y) {
    for (Index x = p.col0; x < p.col0 + p.cols; ++x) {
      if (m(y, x) != 0) {
        grad.values.col(y * grad.width + x) += share;
      }
    }
  }
}

FeatureMap masked_avg_pool_backward(const Prototype& p, const Mask& m, const Vector& d_prototype,
                                    Index channels, Index height, Index width) {
  FeatureMap grad = FeatureMap::zeros(channels, height, width);
  masked_avg_pool_backward_into(p, m, d_prototype, grad);
  return grad;
}

std::vector<Prototype> grid_local_prototypes(const FeatureMap& f, const Mask& m, Index cell,
                                             Kind kind) {
  check_mask_shape(f, m, "grid_local_prototypes");
  if (cell < 1) {
    throw ConfigError("grid_local_prototypes: cell size must be >= 1");
  }
  std::vector<Prototype> out;
  for (Index y0 = 0; y0 < f.height; y0 += cell) {
    for (Index x0 = 0; x0 < f.width; x0 += cell) {
      const Index rows = std::min(cell, f.height - y0);
      const Index cols = std::min(cell, f.width - x0);
      Prototype p = pool_region(f, m, kind, Origin::GridLocal, y0, x0, rows, cols);
      if (p.active > 0) out.push_back(std::move(p));
    }
  }
  if (out.empty() && (m.array() != 0).any()) {
    out.push_back(masked_avg_pool(f, m, kind));
  }
  return out;
}

Matrix cosine_map(const FeatureMap& f, const Prototype& p, Scalar kappa) {
  if (p.vector.size() != f.channels) {
    throw DimensionError("cosine_map: prototype length " + std::to_string(p.vector.size()) +
                         " does not match channel count " + std::to_string(f.channels));
  }
  const Scalar p_norm = p.vector.norm();
  if (p_norm == 0) {
    throw DegenerateInput("cosine_map: prototype has zero norm");
  }
  Matrix out(f.height, f.width);
  for (Index y = 0; y < f.height; ++y) {
    for (Index x = 0; x < f.width; ++x) {
      const auto feat = f.values.col(y * f.width + x);
      const Scalar f_norm = feat.norm();
      out(y, x) = f_norm == 0 ? 0.0 : kappa * feat.dot(p.vector) / (f_norm * p_norm);
    }
  }
  return out;
}

CosineGrads cosine_map_backward(const FeatureMap& f, const Prototype& p, Scalar kappa,
                                const Matrix& d_map) {
  if (d_map.rows() != f.height || d_map.cols() != f.width) {
    throw DimensionError("cosine_map_backward: gradient shape " +
                         shape_string(d_map.rows(), d_map.cols()) + " does not match map " +
                         shape_string(f.height, f.width));
  }
  const Scalar p_norm = p.vector.norm();
  if (p_norm == 0) {
    throw DegenerateInput("cosine_map_backward: prototype has zero norm");
  }
  CosineGrads grads;
  grads.d_features = FeatureMap::zeros(f.channels, f.height, f.width);
  grads.d_prototype = Vector::Zero(f.channels);
  for (Index y = 0; y < f.height; ++y) {
    for (Index x = 0; x < f.width; ++x) {
      const Scalar g = d_map(y, x);
      if (g == 0) continue;
      const auto feat = f.values.col(y * f.width + x);
      const Scalar f_norm = feat.norm();
      if (f_norm == 0) continue;
      const Scalar dot = feat.dot(p.vector);
      const Scalar denom = f_norm * p_norm;
      grads.d_features.values.col(y * f.width + x) +=
          kappa * g * (p.vector / denom - (dot / (f_norm * f_norm)) * feat / denom);
      grads.d_prototype += kappa * g * (feat / denom - (dot / (p_norm * p_norm)) * p.vector / denom);
    }
  }
  return grads;
}

Prediction predict(const std::vector<Matrix>& fg_maps, const Matrix& bg_map) {
  if (fg_maps.empty()) {
    throw DegenerateInput("predict: at least one foreground map is required");
  }
  for (const Matrix& m : fg_maps) {
    if (m.rows() != bg_map.rows() || m.cols() != bg_map.cols()) {
      throw DimensionError("predict: foreground map shape " + shape_string(m.rows(), m.cols()) +
                           " does not match background map " +
                           shape_string(bg_map.rows(), bg_map.cols()));
    }
  }
  Prediction out;
  out.n_fg = static_cast<Index>(fg_maps.size());
  out.fg_score = fg_maps[0];
  out.source = LabelMap::Zero(bg_map.rows(), bg_map.cols());
  for (std::size_t i = 1; i < fg_maps.size(); ++i) {
    for (Index y = 0; y < bg_map.rows(); ++y) {
      for (Index x = 0; x < bg_map.cols(); ++x) {
        if (fg_maps[i](y, x) > out.fg_score(y, x)) {
          out.fg_score(y, x) = fg_maps[i](y, x);
          out.source(y, x) = static_cast<int>(i);
        }
      }
    }
  }
  out.bg_score = bg_map;
  out.probs.prob_fg.resize(bg_map.rows(), bg_map.cols());
  out.probs.prob_bg.resize(bg_map.rows(), bg_map.cols());
  for (Index y = 0; y < bg_map.rows(); ++y) {
    for (Index x = 0; x < bg_map.cols(); ++x) {
      const Scalar p = 1.0 / (1.0 + std::exp(out.bg_score(y, x) - out.fg_score(y, x)));
      out.probs.prob_fg(y, x) = p;
      out.probs.prob_bg(y, x) = 1.0 - p;
    }
  }
  return out;
}

PredictGrads predict_backward(const Prediction& fwd, const Matrix& d_prob_fg,
                              const Matrix& d_prob_bg) {
  const Index h = fwd.bg_score.rows(), w = fwd.bg_score.cols();
  PredictGrads grads;
  grads.d_fg_maps.assign(static_cast<std::size_t>(fwd.n_fg), Matrix::Zero(h, w));
  grads.d_bg_map = Matrix::Zero(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Scalar pf = fwd.probs.prob_fg(y, x);
      const Scalar pb = fwd.probs.prob_bg(y, x);
      const Scalar d_fg = (d_prob_fg(y, x) - d_prob_bg(y, x)) * pf * pb;
      grads.d_fg_maps[static_cast<std::size_t>(fwd.source(y, x))](y, x) += d_fg;
      grads.d_bg_map(y, x) -= d_fg;
    }
  }
  return grads;
}

}  // namespace bro::proto
