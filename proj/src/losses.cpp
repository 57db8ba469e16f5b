#include "bro/losses.hpp"

#include <algorithm>
#include <cmath>

namespace bro::losses {

namespace {

void check_shapes(const proto::PredictionMap& pred, const Mask& truth, const char* where) {
  if (pred.prob_fg.rows() != truth.rows() || pred.prob_fg.cols() != truth.cols() ||
      pred.prob_bg.rows() != truth.rows() || pred.prob_bg.cols() != truth.cols()) {
    throw DimensionError(std::string(where) + ": prediction shape " +
                         shape_string(pred.prob_fg.rows(), pred.prob_fg.cols()) +
                         " does not match mask " + shape_string(truth.rows(), truth.cols()));
  }
}

Scalar clamped(Scalar p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

Scalar cross_entropy(const proto::PredictionMap& pred, const Mask& truth) {
  Scalar sum = 0;
  for (Index y = 0; y < truth.rows(); ++y) {
    for (Index x = 0; x < truth.cols(); ++x) {
      const bool fg = truth(y, x) != 0;
      sum -= std::log(clamped(fg ? pred.prob_fg(y, x) : pred.prob_bg(y, x)));
    }
  }
  return sum / static_cast<Scalar>(truth.size());
}

}  // namespace

Scalar seg_loss(const proto::PredictionMap& pred, const Mask& truth) {
  check_shapes(pred, truth, "seg_loss");
  return cross_entropy(pred, truth);
}

Scalar reg_loss(const proto::PredictionMap& pred_support, const Mask& support_truth) {
  check_shapes(pred_support, support_truth, "reg_loss");
  return cross_entropy(pred_support, support_truth);
}

CrossEntropyGrads seg_loss_backward(const proto::PredictionMap& pred, const Mask& truth) {
  check_shapes(pred, truth, "seg_loss_backward");
  const Scalar inv_n = 1.0 / static_cast<Scalar>(truth.size());
  CrossEntropyGrads grads;
  grads.d_prob_fg = Matrix::Zero(truth.rows(), truth.cols());
  grads.d_prob_bg = Matrix::Zero(truth.rows(), truth.cols());
  for (Index y = 0; y < truth.rows(); ++y) {
    for (Index x = 0; x < truth.cols(); ++x) {
      const bool fg = truth(y, x) != 0;
      const Scalar p = fg ? pred.prob_fg(y, x) : pred.prob_bg(y, x);
      if (p < kProbFloor || p > 1.0 - kProbFloor) continue;  // clamp is flat there
      Matrix& target = fg ? grads.d_prob_fg : grads.d_prob_bg;
      target(y, x) = -inv_n / p;
    }
  }
  return grads;
}

LossBreakdown total_loss(Scalar seg, Scalar reg, Scalar adv, Scalar beta) {
  LossBreakdown out;
  out.seg = seg;
  out.reg = reg;
  out.adv = adv;
  out.beta = beta;
  out.total = seg + reg + beta * adv;
  return out;
}

Scalar dice(const Mask& a, const Mask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("dice: mask shapes " + shape_string(a.rows(), a.cols()) + " and " +
                         shape_string(b.rows(), b.cols()) + " do not match");
  }
  Index inter = 0, size_a = 0, size_b = 0;
  for (Index y = 0; y < a.rows(); ++y) {
    for (Index x = 0; x < a.cols(); ++x) {
      const bool in_a = a(y, x) != 0;
      const bool in_b = b(y, x) != 0;
      size_a += in_a;
      size_b += in_b;
      inter += in_a && in_b;
    }
  }
  if (size_a + size_b == 0) return 100.0;
  return 200.0 * static_cast<Scalar>(inter) / static_cast<Scalar>(size_a + size_b);
}

}  // namespace bro::losses
