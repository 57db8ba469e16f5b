#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "bro/episodes.hpp"
#include "bro/hica.hpp"

namespace bro::config {

/// Flat `key = value` text; '#' starts a comment; blank lines ignored.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config(std::istream& in);
ConfigMap parse_config_file(const std::string& path);

struct TrainConfig {
  Scalar alpha = 0.2;
  Scalar beta = 1.0;
  Index group_size = 4;
  Scalar kappa = 20.0;
  Scalar lr = 1e-3;
  Scalar momentum = 0.9;
  Index epochs = 30;
  Index episodes_per_epoch = 200;
  std::uint64_t seed = 1;

  bool no_feac = false;
  bool no_hica = false;
  bool no_ad = false;
  bool no_b_delta = false;
  bool no_adv_loss = false;
  hica::NormPlacement norm_placement = hica::NormPlacement::Inside;

  Index channels = 32;
  Index image_size = 64;
  Index organs = 2;
  Index grid_cell = 4;
  Index test_episodes = 100;
  std::uint64_t test_seed = 9000;
  Index threads = 1;
  std::string out_dir = ".";
  episodes::EpisodeSource source = episodes::EpisodeSource::SupervisedPhantom;
  Index superpixel_count = 32;
};

/// Fail-closed: unknown keys, unparsable values, and invariant violations all
/// raise ConfigError naming the offending key.
TrainConfig train_config_from_map(const ConfigMap& map);
TrainConfig load_train_config(const std::string& path);

/// Fixed key order and exact scalar round-trip; embedded in checkpoints.
std::string train_config_to_text(const TrainConfig& cfg);

std::string format_scalar(Scalar v);

}  // namespace bro::config
