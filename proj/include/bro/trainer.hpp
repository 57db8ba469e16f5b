#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bro/config.hpp"
#include "bro/encoder.hpp"
#include "bro/episodes.hpp"
#include "bro/feac.hpp"
#include "bro/hica.hpp"
#include "bro/losses.hpp"
#include "bro/prototypes.hpp"

namespace bro::trainer {

using config::TrainConfig;

struct Model {
  enc::Encoder encoder;
  Matrix b_delta;  // (channels/group_size)^2, trainable offset
};

Model init_model(const TrainConfig& cfg);

/// All trainable coefficients in checkpoint order (conv weights and biases
/// layer by layer, then the offset matrix).
Vector flatten_params(const Model& model);
void set_params(Model& model, const Vector& params);

struct ModelGrads {
  enc::Grads encoder;
  Matrix d_b_delta;
};

/// 3x3 box mean with clipped windows; the no-attention smoothing baseline.
FeatureMap box_smooth3(const FeatureMap& f);
FeatureMap box_smooth3_backward(const FeatureMap& d_out);

Mask downsample_mask(const Mask& m, Index out_h, Index out_w);
Mask upsample_mask(const Mask& m, Index out_h, Index out_w);

/// One direction of the pipeline: prototypes from side a, scored on side b.
struct DirectionTrace {
  bool used = false;
  bool has_feac = false, has_hica = false;
  feac::Calibration cal;
  FeatureMap f_hat;   // calibrated (or raw) side-a features
  hica::ChannelGroups groups;
  hica::FineSimilarity fine;
  FeatureMap f_tilde;  // fused (or box-smoothed) side-a features
  Mask mask_fg, mask_bg;
  std::vector<proto::Prototype> fg_protos;
  proto::Prototype bg_proto;
  std::vector<Matrix> fg_maps;
  Matrix bg_map;
  proto::Prediction pred;
};

struct EpisodeTrace {
  enc::Activations acts_s, acts_q;
  Mask m_s_feat, m_q_feat;
  DirectionTrace dir_sq;  // prototypes from support, prediction on query
  Mask pseudo_q;          // binarized query prediction, constant in gradients
  DirectionTrace dir_qs;  // role swap; skipped if the pseudo-mask degenerates
  losses::LossBreakdown loss;
};

EpisodeTrace forward_episode(const Model& model, const episodes::Episode& ep,
                             const TrainConfig& cfg);

ModelGrads backward_episode(const Model& model, const EpisodeTrace& trace, const TrainConfig& cfg);

/// Derives the episode generator settings embedded in a train config.
episodes::EpisodeConfig episode_config(const TrainConfig& cfg);

std::vector<episodes::Episode> make_test_episodes(const TrainConfig& cfg);

/// SGD with momentum over encoder parameters and the offset matrix. Logs one
/// `epoch <k> seg <v> reg <v> adv <v> total <v>` line per epoch when log is
/// non-null. Deterministic for a fixed seed.
Model train(const TrainConfig& cfg, std::ostream* log = nullptr);

struct EvalResult {
  std::vector<Scalar> dice;
  Scalar mean = 0;
};

EvalResult evaluate(const Model& model, const TrainConfig& cfg,
                    const std::vector<episodes::Episode>& test_episodes);

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg);

struct Checkpoint {
  Model model;
  TrainConfig cfg;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace bro::trainer
