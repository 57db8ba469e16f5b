#include "bro/feac.hpp"

#include <cmath>

namespace bro::feac {

Calibration calibrate(const FeatureMap& f_s, const FeatureMap& f_q) {
  if (f_s.channels != f_q.channels || f_s.height != f_q.height || f_s.width != f_q.width) {
    throw DimensionError("calibrate: support and query feature maps must have identical shapes");
  }
  Calibration out;
  out.u_s = to_pixel_rows(f_s);
  out.u_q = to_pixel_rows(f_q);
  out.norm_s = frobenius_norm(out.u_s);
  out.norm_q = frobenius_norm(out.u_q);
  if (out.norm_s == 0 || out.norm_q == 0) {
    throw DegenerateInput("calibrate: feature map with zero Frobenius norm");
  }
  Matrix scores = matmul(out.u_s, out.u_q.transpose());
  out.attention = softmax_rows(scores);
  out.attended = matmul(out.attention, out.u_s) / (out.norm_s * out.norm_q);
  Matrix rows = out.attended + out.u_s;
  out.calibrated = from_pixel_rows(rows, f_s.height, f_s.width);
  return out;
}

CalibrationGrads calibrate_backward(const Calibration& fwd, const FeatureMap& d_output) {
  const Matrix g = to_pixel_rows(d_output);
  if (g.rows() != fwd.u_s.rows() || g.cols() != fwd.u_s.cols()) {
    throw DimensionError("calibrate_backward: gradient shape does not match the forward pass");
  }
  const Scalar inv_norms = 1.0 / (fwd.norm_s * fwd.norm_q);

  // Residual plus the direct path through A * U_s.
  Matrix d_us = g + matmul(fwd.attention.transpose(), g) * inv_norms;

  // Path through the attention weights and the raw scores S = U_s * U_q^T.
  Matrix d_attention = matmul(g, fwd.u_s.transpose()) * inv_norms;
  Matrix d_scores = softmax_rows_backward(fwd.attention, d_attention);
  d_us += matmul(d_scores, fwd.u_q);
  Matrix d_uq = matmul(d_scores.transpose(), fwd.u_s);

  // Path through the 1/(||U_s|| * ||U_q||) denominator.
  const Scalar scaled = fwd.attended.cwiseProduct(g).sum();
  d_us -= (scaled / (fwd.norm_s * fwd.norm_s)) * fwd.u_s;
  d_uq -= (scaled / (fwd.norm_q * fwd.norm_q)) * fwd.u_q;

  CalibrationGrads grads;
  const Index h = fwd.calibrated.height, w = fwd.calibrated.width;
  grads.d_support = from_pixel_rows(d_us, h, w);
  grads.d_query = from_pixel_rows(d_uq, h, w);
  return grads;
}

}  // namespace bro::feac
