#include "bro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace bro::trainer {

Model init_model(const TrainConfig& cfg) {
  Model m;
  m.encoder = enc::make_encoder(cfg.channels, mix_seed(cfg.seed, 7));
  const Index groups = cfg.channels / cfg.group_size;
  m.b_delta = Matrix::Zero(groups, groups);
  return m;
}

Vector flatten_params(const Model& model) {
  Index total = 0;
  for (const auto& layer : model.encoder.layers) {
    total += layer.weight.size() + layer.bias.size();
  }
  total += model.b_delta.size();
  Vector out(total);
  Index at = 0;
  for (const auto& layer : model.encoder.layers) {
    for (Index r = 0; r < layer.weight.rows(); ++r)
      for (Index c = 0; c < layer.weight.cols(); ++c) out(at++) = layer.weight(r, c);
    for (Index i = 0; i < layer.bias.size(); ++i) out(at++) = layer.bias(i);
  }
  for (Index r = 0; r < model.b_delta.rows(); ++r)
    for (Index c = 0; c < model.b_delta.cols(); ++c) out(at++) = model.b_delta(r, c);
  return out;
}

void set_params(Model& model, const Vector& params) {
  Index at = 0;
  for (auto& layer : model.encoder.layers) {
    for (Index r = 0; r < layer.weight.rows(); ++r)
      for (Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = params(at++);
    for (Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = params(at++);
  }
  for (Index r = 0; r < model.b_delta.rows(); ++r)
    for (Index c = 0; c < model.b_delta.cols(); ++c) model.b_delta(r, c) = params(at++);
  if (at != params.size()) {
    throw DimensionError("set_params: expected " + std::to_string(at) + " coefficients, got " +
                         std::to_string(params.size()));
  }
}

FeatureMap box_smooth3(const FeatureMap& f) {
  FeatureMap out = FeatureMap::zeros(f.channels, f.height, f.width);
  for (Index c = 0; c < f.channels; ++c) {
    for (Index y = 0; y < f.height; ++y) {
      for (Index x = 0; x < f.width; ++x) {
        Scalar sum = 0;
        int count = 0;
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= f.height || nx < 0 || nx >= f.width) continue;
            sum += f.at(c, ny, nx);
            ++count;
          }
        }
        out.at(c, y, x) = sum / static_cast<Scalar>(count);
      }
    }
  }
  return out;
}

FeatureMap box_smooth3_backward(const FeatureMap& d_out) {
  FeatureMap d_in = FeatureMap::zeros(d_out.channels, d_out.height, d_out.width);
  for (Index c = 0; c < d_out.channels; ++c) {
    for (Index y = 0; y < d_out.height; ++y) {
      for (Index x = 0; x < d_out.width; ++x) {
        int count = 0;
        for (Index dy = -1; dy <= 1; ++dy)
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index ny = y + dy, nx = x + dx;
            if (ny >= 0 && ny < d_out.height && nx >= 0 && nx < d_out.width) ++count;
          }
        const Scalar share = d_out.at(c, y, x) / static_cast<Scalar>(count);
        for (Index dy = -1; dy <= 1; ++dy) {
          for (Index dx = -1; dx <= 1; ++dx) {
            const Index ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= d_out.height || nx < 0 || nx >= d_out.width) continue;
            d_in.at(c, ny, nx) += share;
          }
        }
      }
    }
  }
  return d_in;
}

Mask downsample_mask(const Mask& m, Index out_h, Index out_w) {
  if (out_h < 1 || out_w < 1 || m.rows() % out_h != 0 || m.cols() % out_w != 0) {
    throw DimensionError("downsample_mask: " + shape_string(m.rows(), m.cols()) +
                         " is not an integer multiple of " + shape_string(out_h, out_w));
  }
  const Index fy = m.rows() / out_h, fx = m.cols() / out_w;
  Mask out(out_h, out_w);
  for (Index y = 0; y < out_h; ++y)
    for (Index x = 0; x < out_w; ++x) out(y, x) = m(y * fy, x * fx);
  return out;
}

Mask upsample_mask(const Mask& m, Index out_h, Index out_w) {
  if (m.rows() < 1 || m.cols() < 1 || out_h % m.rows() != 0 || out_w % m.cols() != 0) {
    throw DimensionError("upsample_mask: " + shape_string(out_h, out_w) +
                         " is not an integer multiple of " + shape_string(m.rows(), m.cols()));
  }
  const Index fy = out_h / m.rows(), fx = out_w / m.cols();
  Mask out(out_h, out_w);
  for (Index y = 0; y < out_h; ++y)
    for (Index x = 0; x < out_w; ++x) out(y, x) = m(y / fy, x / fx);
  return out;
}

namespace {

bool adv_active(const TrainConfig& cfg) {
  return !cfg.no_hica && !cfg.no_ad && !cfg.no_adv_loss;
}

DirectionTrace direction_forward(const Model& model, const TrainConfig& cfg, const FeatureMap& f_a,
                                 const FeatureMap& f_b, const Mask& mask_fg) {
  DirectionTrace t;
  t.used = true;
  t.mask_fg = mask_fg;
  t.mask_bg = (1.0 - mask_fg.array()).matrix();
  t.has_feac = !cfg.no_feac;
  if (t.has_feac) {
    t.cal = feac::calibrate(f_a, f_b);
    t.f_hat = t.cal.calibrated;
  } else {
    t.f_hat = f_a;
  }
  t.has_hica = !cfg.no_hica;
  if (t.has_hica) {
    t.groups = hica::channel_groups(t.f_hat, cfg.group_size);
    hica::MeanOffset offset;
    offset.alpha = cfg.no_ad ? 0.0 : cfg.alpha;
    offset.b_delta = (cfg.no_ad || cfg.no_b_delta)
                         ? Matrix::Zero(model.b_delta.rows(), model.b_delta.cols())
                         : model.b_delta;
    t.fine = hica::fine_similarity(hica::coarse_similarity(t.groups), offset,
                                   frobenius_norm(t.groups.g), cfg.norm_placement);
    t.f_tilde = hica::fuse(t.fine, t.groups);
  } else {
    t.f_tilde = box_smooth3(t.f_hat);
  }
  t.fg_protos = proto::grid_local_prototypes(t.f_hat, t.mask_fg, cfg.grid_cell);
  if (t.fg_protos.empty()) {
    throw DegenerateInput("forward_episode: foreground mask empty at feature resolution");
  }
  t.bg_proto = proto::masked_avg_pool(t.f_tilde, t.mask_bg, proto::Kind::Background);
  t.fg_maps.reserve(t.fg_protos.size());
  for (const auto& p : t.fg_protos) {
    t.fg_maps.push_back(proto::cosine_map(f_b, p, cfg.kappa));
  }
  t.bg_map = proto::cosine_map(f_b, t.bg_proto, cfg.kappa);
  t.pred = proto::predict(t.fg_maps, t.bg_map);
  return t;
}

struct DirectionGrads {
  FeatureMap d_f_a, d_f_b;
  Matrix d_b_delta;
  bool delta_trainable = false;
};

DirectionGrads direction_backward(const TrainConfig& cfg, const DirectionTrace& t,
                                  const FeatureMap& f_b, const losses::CrossEntropyGrads& ce,
                                  const Matrix* extra_d_b_f) {
  auto pg = proto::predict_backward(t.pred, ce.d_prob_fg, ce.d_prob_bg);
  FeatureMap d_f_b = FeatureMap::zeros(f_b.channels, f_b.height, f_b.width);
  FeatureMap d_f_hat = FeatureMap::zeros(t.f_hat.channels, t.f_hat.height, t.f_hat.width);
  FeatureMap d_f_tilde = FeatureMap::zeros(t.f_tilde.channels, t.f_tilde.height, t.f_tilde.width);

  for (std::size_t i = 0; i < t.fg_protos.size(); ++i) {
    auto cg = proto::cosine_map_backward(f_b, t.fg_protos[i], cfg.kappa, pg.d_fg_maps[i]);
    d_f_b.values += cg.d_features.values;
    proto::masked_avg_pool_backward_into(t.fg_protos[i], t.mask_fg, cg.d_prototype, d_f_hat);
  }
  auto cgb = proto::cosine_map_backward(f_b, t.bg_proto, cfg.kappa, pg.d_bg_map);
  d_f_b.values += cgb.d_features.values;
  proto::masked_avg_pool_backward_into(t.bg_proto, t.mask_bg, cgb.d_prototype, d_f_tilde);

  DirectionGrads out;
  if (t.has_hica) {
    auto fg = hica::fuse_backward(t.fine, t.groups, d_f_tilde);
    Matrix d_b_f = fg.d_b_f;
    if (extra_d_b_f) d_b_f += *extra_d_b_f;
    auto fsg = hica::fine_similarity_backward(t.fine, d_b_f);
    Matrix d_g = fg.d_g;
    d_g += matmul(Matrix(fsg.d_b_c + fsg.d_b_c.transpose()), t.groups.g);
    if (fsg.d_g_norm != 0) {
      d_g += (fsg.d_g_norm / t.fine.g_norm) * t.groups.g;
    }
    hica::ChannelGroups d_groups = t.groups;
    d_groups.g = std::move(d_g);
    d_f_hat.values += hica::ungroup(d_groups).values;
    out.d_b_delta = std::move(fsg.d_b_delta);
    out.delta_trainable = !cfg.no_ad && !cfg.no_b_delta;
  } else {
    d_f_hat.values += box_smooth3_backward(d_f_tilde).values;
  }

  if (t.has_feac) {
    auto cal_grads = feac::calibrate_backward(t.cal, d_f_hat);
    out.d_f_a = std::move(cal_grads.d_support);
    d_f_b.values += cal_grads.d_query.values;
  } else {
    out.d_f_a = std::move(d_f_hat);
  }
  out.d_f_b = std::move(d_f_b);
  return out;
}

Mask binarize(const Matrix& prob_fg) {
  Mask out(prob_fg.rows(), prob_fg.cols());
  for (Index y = 0; y < prob_fg.rows(); ++y)
    for (Index x = 0; x < prob_fg.cols(); ++x) out(y, x) = prob_fg(y, x) > 0.5 ? 1.0 : 0.0;
  return out;
}

std::string fmt6(Scalar v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << v;
  return out.str();
}

}  // namespace

EpisodeTrace forward_episode(const Model& model, const episodes::Episode& ep,
                             const TrainConfig& cfg) {
  EpisodeTrace t;
  t.acts_s = enc::forward(model.encoder, ep.support_image);
  t.acts_q = enc::forward(model.encoder, ep.query_image);
  const Index fh = t.acts_s.output.height, fw = t.acts_s.output.width;
  t.m_s_feat = downsample_mask(ep.support_mask, fh, fw);
  t.m_q_feat = downsample_mask(ep.query_mask, fh, fw);
  if ((t.m_s_feat.array() != 0).count() == 0) {
    throw DegenerateInput("forward_episode: support mask empty at feature resolution");
  }
  if ((t.m_s_feat.array() == 0).count() == 0) {
    throw DegenerateInput("forward_episode: support background empty at feature resolution");
  }

  t.dir_sq = direction_forward(model, cfg, t.acts_s.output, t.acts_q.output, t.m_s_feat);
  const Scalar seg = losses::seg_loss(t.dir_sq.pred.probs, t.m_q_feat);

  // Alignment role swap: the binarized query prediction acts as the support mask;
  // it is a constant as far as gradients are concerned.
  t.pseudo_q = binarize(t.dir_sq.pred.probs.prob_fg);
  Scalar reg = 0;
  const bool pseudo_fg = (t.pseudo_q.array() != 0).count() > 0;
  const bool pseudo_bg = (t.pseudo_q.array() == 0).count() > 0;
  if (pseudo_fg && pseudo_bg) {
    t.dir_qs = direction_forward(model, cfg, t.acts_q.output, t.acts_s.output, t.pseudo_q);
    reg = losses::reg_loss(t.dir_qs.pred.probs, t.m_s_feat);
  }

  const Scalar adv = adv_active(cfg) ? hica::adversarial_loss(t.dir_sq.fine.b_f) : 0.0;
  t.loss = losses::total_loss(seg, reg, adv, cfg.beta);
  return t;
}

ModelGrads backward_episode(const Model& model, const EpisodeTrace& trace,
                            const TrainConfig& cfg) {
  auto ce_q = losses::seg_loss_backward(trace.dir_sq.pred.probs, trace.m_q_feat);
  Matrix extra;
  const Matrix* extra_ptr = nullptr;
  if (adv_active(cfg) && cfg.beta != 0) {
    extra = cfg.beta * hica::adversarial_loss_backward(trace.dir_sq.fine.b_f);
    extra_ptr = &extra;
  }
  auto g1 = direction_backward(cfg, trace.dir_sq, trace.acts_q.output, ce_q, extra_ptr);
  FeatureMap d_f_s = std::move(g1.d_f_a);
  FeatureMap d_f_q = std::move(g1.d_f_b);
  Matrix d_b_delta = Matrix::Zero(model.b_delta.rows(), model.b_delta.cols());
  if (g1.delta_trainable) d_b_delta += g1.d_b_delta;

  if (trace.dir_qs.used) {
    auto ce_s = losses::seg_loss_backward(trace.dir_qs.pred.probs, trace.m_s_feat);
    auto g2 = direction_backward(cfg, trace.dir_qs, trace.acts_s.output, ce_s, nullptr);
    d_f_q.values += g2.d_f_a.values;
    d_f_s.values += g2.d_f_b.values;
    if (g2.delta_trainable) d_b_delta += g2.d_b_delta;
  }

  ModelGrads grads;
  grads.encoder = enc::backward(model.encoder, trace.acts_s, d_f_s);
  grads.encoder += enc::backward(model.encoder, trace.acts_q, d_f_q);
  grads.d_b_delta = std::move(d_b_delta);
  return grads;
}

episodes::EpisodeConfig episode_config(const TrainConfig& cfg) {
  episodes::EpisodeConfig ecfg;
  ecfg.source = cfg.source;
  ecfg.phantom.height = cfg.image_size;
  ecfg.phantom.width = cfg.image_size;
  ecfg.phantom.organs = cfg.organs;
  ecfg.superpixel_count = cfg.superpixel_count;
  return ecfg;
}

std::vector<episodes::Episode> make_test_episodes(const TrainConfig& cfg) {
  const episodes::EpisodeConfig ecfg = episode_config(cfg);
  const std::uint64_t stream = mix_seed(cfg.test_seed, 2);
  std::vector<episodes::Episode> eps;
  eps.reserve(static_cast<std::size_t>(cfg.test_episodes));
  for (Index i = 0; i < cfg.test_episodes; ++i) {
    eps.push_back(episodes::sample_episode(ecfg, mix_seed(stream, static_cast<std::uint64_t>(i))));
  }
  return eps;
}

Model train(const TrainConfig& cfg, std::ostream* log) {
  Model model = init_model(cfg);
  enc::Grads velocity = enc::zero_grads(model.encoder);
  Matrix velocity_delta = Matrix::Zero(model.b_delta.rows(), model.b_delta.cols());
  const episodes::EpisodeConfig ecfg = episode_config(cfg);
  const std::uint64_t train_stream = mix_seed(cfg.seed, 1);
  std::uint64_t counter = 0;

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Scalar sum_seg = 0, sum_reg = 0, sum_adv = 0, sum_total = 0;
    for (Index i = 0; i < cfg.episodes_per_epoch; ++i) {
      EpisodeTrace trace;
      std::uint64_t ep_seed = 0;
      bool ok = false;
      for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
        ep_seed = mix_seed(train_stream, counter++);
        try {
          const episodes::Episode ep = episodes::sample_episode(ecfg, ep_seed);
          trace = forward_episode(model, ep, cfg);
          ok = true;
        } catch (const DegenerateInput&) {
        }
      }
      if (!ok) {
        throw Error("train: no usable episode after 16 attempts at epoch " +
                    std::to_string(epoch));
      }
      if (!std::isfinite(trace.loss.total)) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                    ", episode seed " + std::to_string(ep_seed) + " (seg " +
                    config::format_scalar(trace.loss.seg) + ", reg " +
                    config::format_scalar(trace.loss.reg) + ", adv " +
                    config::format_scalar(trace.loss.adv) + ")");
      }
      ModelGrads grads = backward_episode(model, trace, cfg);
      for (std::size_t l = 0; l < model.encoder.layers.size(); ++l) {
        velocity.d_weight[l] = cfg.momentum * velocity.d_weight[l] + grads.encoder.d_weight[l];
        velocity.d_bias[l] = cfg.momentum * velocity.d_bias[l] + grads.encoder.d_bias[l];
        model.encoder.layers[l].weight -= cfg.lr * velocity.d_weight[l];
        model.encoder.layers[l].bias -= cfg.lr * velocity.d_bias[l];
      }
      velocity_delta = cfg.momentum * velocity_delta + grads.d_b_delta;
      model.b_delta -= cfg.lr * velocity_delta;

      sum_seg += trace.loss.seg;
      sum_reg += trace.loss.reg;
      sum_adv += trace.loss.adv;
      sum_total += trace.loss.total;
    }
    if (log) {
      const auto n = static_cast<Scalar>(cfg.episodes_per_epoch);
      *log << "epoch " << epoch << " seg " << fmt6(sum_seg / n) << " reg " << fmt6(sum_reg / n)
           << " adv " << fmt6(sum_adv / n) << " total " << fmt6(sum_total / n) << "\n";
    }
  }
  return model;
}

namespace {

Scalar episode_dice(const Model& model, const TrainConfig& cfg, const episodes::Episode& ep) {
  enc::Activations acts_s = enc::forward(model.encoder, ep.support_image);
  enc::Activations acts_q = enc::forward(model.encoder, ep.query_image);
  const Index fh = acts_s.output.height, fw = acts_s.output.width;
  const Mask m_s_feat = downsample_mask(ep.support_mask, fh, fw);
  if ((m_s_feat.array() != 0).count() == 0 || (m_s_feat.array() == 0).count() == 0) {
    throw DegenerateInput("evaluate: support mask degenerate at feature resolution");
  }
  DirectionTrace dir = direction_forward(model, cfg, acts_s.output, acts_q.output, m_s_feat);
  const Mask pred_feat = binarize(dir.pred.probs.prob_fg);
  const Mask pred_full = upsample_mask(pred_feat, ep.query_mask.rows(), ep.query_mask.cols());
  return losses::dice(pred_full, ep.query_mask);
}

}  // namespace

EvalResult evaluate(const Model& model, const TrainConfig& cfg,
                    const std::vector<episodes::Episode>& test_episodes) {
  EvalResult res;
  res.dice.assign(test_episodes.size(), 0.0);
  const std::size_t n = test_episodes.size();
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max<Index>(1, cfg.threads)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) res.dice[i] = episode_dice(model, cfg, test_episodes[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) {
            res.dice[i] = episode_dice(model, cfg, test_episodes[i]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }
  Scalar sum = 0;
  for (Scalar d : res.dice) sum += d;
  res.mean = n == 0 ? 0.0 : sum / static_cast<Scalar>(n);
  return res;
}

namespace {

const char* kCheckpointMagic = "BROCKPT 1";

std::vector<std::pair<std::string, Tensor>> model_tensors(const Model& model) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < model.encoder.layers.size(); ++l) {
    const auto& layer = model.encoder.layers[l];
    out.emplace_back("layer" + std::to_string(l) + ".weight", tensor_from_matrix(layer.weight));
    out.emplace_back("layer" + std::to_string(l) + ".bias",
                     Tensor({static_cast<std::uint64_t>(layer.bias.size())}, layer.bias));
  }
  out.emplace_back("b_delta", tensor_from_matrix(model.b_delta));
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << kCheckpointMagic << "\n";
  out << config::train_config_to_text(cfg);
  const auto tensors = model_tensors(model);
  out << "tensors " << tensors.size() << "\n";
  for (const auto& [name, tensor] : tensors) {
    out << "tensor " << name << "\n";
    save_tensor(out, tensor);
  }
  if (!out) throw IoError("failed while writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw ConfigError(path + ": not a checkpoint file (bad magic)");
  }
  std::ostringstream config_text;
  std::size_t tensor_count = 0;
  bool saw_tensors = false;
  while (std::getline(in, line)) {
    if (line.rfind("tensors ", 0) == 0) {
      tensor_count = static_cast<std::size_t>(std::stoull(line.substr(8)));
      saw_tensors = true;
      break;
    }
    config_text << line << "\n";
  }
  if (!saw_tensors) throw ConfigError(path + ": checkpoint has no tensor section");

  Checkpoint ckpt;
  std::istringstream cfg_in(config_text.str());
  ckpt.cfg = config::train_config_from_map(config::parse_config(cfg_in));
  ckpt.model = init_model(ckpt.cfg);

  auto expected = model_tensors(ckpt.model);
  if (tensor_count != expected.size()) {
    throw ConfigError(path + ": checkpoint declares " + std::to_string(tensor_count) +
                      " tensors, config implies " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < tensor_count; ++i) {
    if (!std::getline(in, line) || line.rfind("tensor ", 0) != 0) {
      throw ConfigError(path + ": malformed tensor index entry");
    }
    const std::string name = line.substr(7);
    if (name != expected[i].first) {
      throw ConfigError(path + ": tensor '" + name + "' does not match expected '" +
                        expected[i].first + "'");
    }
    Tensor t = load_tensor(in);
    if (t.shape != expected[i].second.shape) {
      throw ConfigError(path + ": tensor '" + name + "' shape does not match the config");
    }
    expected[i].second = std::move(t);
  }

  for (std::size_t l = 0; l < ckpt.model.encoder.layers.size(); ++l) {
    auto& layer = ckpt.model.encoder.layers[l];
    layer.weight = matrix_from_tensor(expected[2 * l].second);
    layer.bias = expected[2 * l + 1].second.data;
  }
  ckpt.model.b_delta = matrix_from_tensor(expected.back().second);
  return ckpt;
}

}  // namespace bro::trainer
