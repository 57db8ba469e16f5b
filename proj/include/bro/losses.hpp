#pragma once

#include "bro/prototypes.hpp"
#include "bro/tensor.hpp"

namespace bro::losses {

/// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] before the log.
inline constexpr Scalar kProbFloor = 1e-12;

struct LossBreakdown {
  Scalar seg = 0, reg = 0, adv = 0;
  Scalar beta = 0;
  Scalar total = 0;
};

/// Mean two-class cross-entropy against a binary mask.
Scalar seg_loss(const proto::PredictionMap& pred, const Mask& truth);

/// Alignment regularization: same formula with support and query roles swapped.
Scalar reg_loss(const proto::PredictionMap& pred_support, const Mask& support_truth);

struct CrossEntropyGrads {
  Matrix d_prob_fg, d_prob_bg;
};

CrossEntropyGrads seg_loss_backward(const proto::PredictionMap& pred, const Mask& truth);

LossBreakdown total_loss(Scalar seg, Scalar reg, Scalar adv, Scalar beta);

/// Dice overlap in [0, 100]; both-empty pairs score 100.
Scalar dice(const Mask& a, const Mask& b);

}  // namespace bro::losses
