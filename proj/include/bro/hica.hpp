#pragma once

#include "bro/tensor.hpp"

namespace bro::hica {

/// Rows are groups of `group_size` neighboring channel vectors, concatenated
/// in channel order, so g has shape (D/N) x (H*W*N).
struct ChannelGroups {
  Matrix g;
  Index group_size = 1;
  Index channels = 0, height = 0, width = 0;
};

struct MeanOffset {
  Matrix b_delta;  // square, (D/N) x (D/N), trainable
  Scalar alpha = 0;
};

enum class NormPlacement { Inside, Outside };

/// Floor applied to the offset-matrix norm inside the similarity scale, so a
/// zero-initialized offset does not produce a zero temperature.
inline constexpr Scalar kOffsetNormFloor = 1e-8;

struct FineSimilarity {
  Matrix b_f;           // refined similarity
  Matrix b_c;           // coarse Gram matrix, cached
  Matrix b_delta;       // offset snapshot, cached for the backward pass
  Matrix softmax_arg;   // input handed to the row softmax
  Matrix softmax_out;   // row-stochastic softmax output (== b_f when inside)
  Scalar scale = 0;     // g_norm^2 * max(||b_delta||_F, floor)
  Scalar g_norm = 0;
  Scalar offset_norm = 0;
  Scalar alpha = 0;
  NormPlacement placement = NormPlacement::Inside;
};

ChannelGroups channel_groups(const FeatureMap& f, Index n);
FeatureMap ungroup(const ChannelGroups& g);
Matrix coarse_similarity(const ChannelGroups& g);

FineSimilarity fine_similarity(const Matrix& b_c, const MeanOffset& offset, Scalar g_norm,
                               NormPlacement placement = NormPlacement::Inside);

struct FineSimilarityGrads {
  Matrix d_b_c;
  Matrix d_b_delta;
  Scalar d_g_norm = 0;
};

FineSimilarityGrads fine_similarity_backward(const FineSimilarity& fwd, const Matrix& d_b_f);

FeatureMap fuse(const FineSimilarity& b_f, const ChannelGroups& g);

struct FuseGrads {
  Matrix d_b_f;
  Matrix d_g;
};

FuseGrads fuse_backward(const FineSimilarity& b_f, const ChannelGroups& g,
                        const FeatureMap& d_fused);

Scalar adversarial_loss(const Matrix& b_f);
Matrix adversarial_loss_backward(const Matrix& b_f);

}  // namespace bro::hica
