#pragma once

#include <vector>

#include "bro/tensor.hpp"

namespace bro::proto {

enum class Kind { Foreground, Background };
enum class Origin { GlobalMap, GridLocal };

struct Prototype {
  Vector vector;
  Kind kind = Kind::Foreground;
  Origin origin = Origin::GlobalMap;
  // Pooling region (row0, col0, rows, cols) and the number of active mask
  // pixels inside it; kept so gradients can be routed back exactly.
  Index row0 = 0, col0 = 0, rows = 0, cols = 0;
  Index active = 0;
};

Prototype masked_avg_pool(const FeatureMap& f, const Mask& m, Kind kind = Kind::Foreground);

/// Scatters a prototype gradient back to the pooled feature map.
FeatureMap masked_avg_pool_backward(const Prototype& p, const Mask& m, const Vector& d_prototype,
                                    Index channels, Index height, Index width);

/// Same, but accumulating into an existing gradient map.
void masked_avg_pool_backward_into(const Prototype& p, const Mask& m, const Vector& d_prototype,
                                   FeatureMap& grad);

/// Masked pooling per cell of a regular grid; empty cells are skipped. A
/// nonempty mask always yields at least one prototype (global fallback).
std::vector<Prototype> grid_local_prototypes(const FeatureMap& f, const Mask& m, Index cell,
                                             Kind kind = Kind::Foreground);

/// Per-pixel kappa * cos(f(:,h,w), p); pixels with zero feature norm map to 0.
Matrix cosine_map(const FeatureMap& f, const Prototype& p, Scalar kappa);

struct CosineGrads {
  FeatureMap d_features;
  Vector d_prototype;
};

CosineGrads cosine_map_backward(const FeatureMap& f, const Prototype& p, Scalar kappa,
                                const Matrix& d_map);

struct PredictionMap {
  Matrix prob_fg, prob_bg;
};

struct Prediction {
  PredictionMap probs;
  Matrix fg_score, bg_score;
  LabelMap source;  // which foreground map won the per-pixel max
  Index n_fg = 0;
};

/// Two-way softmax over {max of foreground scores, background score}.
Prediction predict(const std::vector<Matrix>& fg_maps, const Matrix& bg_map);

struct PredictGrads {
  std::vector<Matrix> d_fg_maps;
  Matrix d_bg_map;
};

PredictGrads predict_backward(const Prediction& fwd, const Matrix& d_prob_fg,
                              const Matrix& d_prob_bg);

}  // namespace bro::proto
