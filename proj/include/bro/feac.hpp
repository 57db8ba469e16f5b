#pragma once

#include "bro/tensor.hpp"

namespace bro::feac {

/// Cross-attention calibration of the support feature map against the query
/// map, with a residual connection:
///
///   U_s, U_q : (H*W) x D pixel-row views
///   A        = softmax_rows(U_s * U_q^T)
///   output   = (A * U_s) / (||U_s||_F * ||U_q||_F) + U_s
///
/// The result keeps the forward intermediates needed by the backward pass.
struct Calibration {
  FeatureMap calibrated;  // same shape as the support input
  Matrix attention;       // A, row-stochastic (H*W) x (H*W)
  Matrix u_s, u_q;        // pixel-row views of the inputs
  Matrix attended;        // A * U_s / (n_s * n_q), cached for the norm grads
  Scalar norm_s = 0, norm_q = 0;
};

Calibration calibrate(const FeatureMap& f_s, const FeatureMap& f_q);

struct CalibrationGrads {
  FeatureMap d_support;
  FeatureMap d_query;
};

/// d_output is the loss gradient w.r.t. the calibrated map.
CalibrationGrads calibrate_backward(const Calibration& fwd, const FeatureMap& d_output);

}  // namespace bro::feac
