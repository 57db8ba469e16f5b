#include "bro/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace bro::config {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

Scalar parse_scalar(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  Scalar v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
  }
  if (pos != value.size()) {
    throw ConfigError("config key '" + key + "': trailing characters in '" + value + "'");
  }
  if (!std::isfinite(v)) {
    throw ConfigError("config key '" + key + "': value must be finite");
  }
  return v;
}

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not an integer");
  }
  if (pos != value.size()) {
    throw ConfigError("config key '" + key + "': trailing characters in '" + value + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not an unsigned integer");
  }
  if (pos != value.size() || value.find('-') != std::string::npos) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not an unsigned integer");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

}  // namespace

ConfigMap parse_config(std::istream& in) {
  ConfigMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (map.count(key)) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key +
                        "'");
    }
    map[key] = value;
  }
  return map;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in);
}

TrainConfig train_config_from_map(const ConfigMap& map) {
  TrainConfig cfg;
  std::set<std::string> seen;
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = map.find(key);
    if (it == map.end()) return nullptr;
    seen.insert(key);
    return &it->second;
  };

  if (const auto* v = get("alpha")) cfg.alpha = parse_scalar("alpha", *v);
  if (const auto* v = get("beta")) cfg.beta = parse_scalar("beta", *v);
  if (const auto* v = get("group_size")) cfg.group_size = parse_int("group_size", *v);
  if (const auto* v = get("kappa")) cfg.kappa = parse_scalar("kappa", *v);
  if (const auto* v = get("lr")) cfg.lr = parse_scalar("lr", *v);
  if (const auto* v = get("momentum")) cfg.momentum = parse_scalar("momentum", *v);
  if (const auto* v = get("epochs")) cfg.epochs = parse_int("epochs", *v);
  if (const auto* v = get("episodes_per_epoch"))
    cfg.episodes_per_epoch = parse_int("episodes_per_epoch", *v);
  if (const auto* v = get("seed")) cfg.seed = parse_u64("seed", *v);
  if (const auto* v = get("no_feac")) cfg.no_feac = parse_bool("no_feac", *v);
  if (const auto* v = get("no_hica")) cfg.no_hica = parse_bool("no_hica", *v);
  if (const auto* v = get("no_ad")) cfg.no_ad = parse_bool("no_ad", *v);
  if (const auto* v = get("no_b_delta")) cfg.no_b_delta = parse_bool("no_b_delta", *v);
  if (const auto* v = get("no_adv_loss")) cfg.no_adv_loss = parse_bool("no_adv_loss", *v);
  if (const auto* v = get("norm_placement")) {
    if (*v == "inside") cfg.norm_placement = hica::NormPlacement::Inside;
    else if (*v == "outside") cfg.norm_placement = hica::NormPlacement::Outside;
    else throw ConfigError("config key 'norm_placement': expected inside/outside, got '" + *v + "'");
  }
  if (const auto* v = get("channels")) cfg.channels = parse_int("channels", *v);
  if (const auto* v = get("image_size")) cfg.image_size = parse_int("image_size", *v);
  if (const auto* v = get("organs")) cfg.organs = parse_int("organs", *v);
  if (const auto* v = get("grid_cell")) cfg.grid_cell = parse_int("grid_cell", *v);
  if (const auto* v = get("test_episodes")) cfg.test_episodes = parse_int("test_episodes", *v);
  if (const auto* v = get("test_seed")) cfg.test_seed = parse_u64("test_seed", *v);
  if (const auto* v = get("threads")) cfg.threads = parse_int("threads", *v);
  if (const auto* v = get("out_dir")) cfg.out_dir = *v;
  if (const auto* v = get("source")) {
    if (*v == "supervised_phantom") cfg.source = episodes::EpisodeSource::SupervisedPhantom;
    else if (*v == "ssl_superpixel") cfg.source = episodes::EpisodeSource::SslSuperpixel;
    else
      throw ConfigError(
          "config key 'source': expected supervised_phantom/ssl_superpixel, got '" + *v + "'");
  }
  if (const auto* v = get("superpixel_count"))
    cfg.superpixel_count = parse_int("superpixel_count", *v);

  for (const auto& [key, value] : map) {
    if (!seen.count(key)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  if (cfg.group_size < 1 || cfg.channels % cfg.group_size != 0) {
    throw ConfigError("config key 'group_size': " + std::to_string(cfg.group_size) +
                      " does not divide channels " + std::to_string(cfg.channels));
  }
  if (!(cfg.lr > 0)) throw ConfigError("config key 'lr': must be > 0");
  if (cfg.momentum < 0 || cfg.momentum >= 1)
    throw ConfigError("config key 'momentum': must be in [0, 1)");
  if (cfg.kappa <= 0) throw ConfigError("config key 'kappa': must be > 0");
  if (cfg.epochs < 1) throw ConfigError("config key 'epochs': must be >= 1");
  if (cfg.episodes_per_epoch < 1)
    throw ConfigError("config key 'episodes_per_epoch': must be >= 1");
  if (cfg.channels < 1) throw ConfigError("config key 'channels': must be >= 1");
  if (cfg.image_size < 32 || cfg.image_size % 4 != 0)
    throw ConfigError("config key 'image_size': must be >= 32 and divisible by 4");
  if (cfg.organs < 1) throw ConfigError("config key 'organs': must be >= 1");
  if (cfg.grid_cell < 1) throw ConfigError("config key 'grid_cell': must be >= 1");
  if (cfg.test_episodes < 1) throw ConfigError("config key 'test_episodes': must be >= 1");
  if (cfg.threads < 1) throw ConfigError("config key 'threads': must be >= 1");
  if (cfg.superpixel_count < 1)
    throw ConfigError("config key 'superpixel_count': must be >= 1");
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  return train_config_from_map(parse_config_file(path));
}

std::string format_scalar(Scalar v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::string train_config_to_text(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "alpha = " << format_scalar(cfg.alpha) << "\n";
  out << "beta = " << format_scalar(cfg.beta) << "\n";
  out << "group_size = " << cfg.group_size << "\n";
  out << "kappa = " << format_scalar(cfg.kappa) << "\n";
  out << "lr = " << format_scalar(cfg.lr) << "\n";
  out << "momentum = " << format_scalar(cfg.momentum) << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "episodes_per_epoch = " << cfg.episodes_per_epoch << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "no_feac = " << (cfg.no_feac ? "true" : "false") << "\n";
  out << "no_hica = " << (cfg.no_hica ? "true" : "false") << "\n";
  out << "no_ad = " << (cfg.no_ad ? "true" : "false") << "\n";
  out << "no_b_delta = " << (cfg.no_b_delta ? "true" : "false") << "\n";
  out << "no_adv_loss = " << (cfg.no_adv_loss ? "true" : "false") << "\n";
  out << "norm_placement = "
      << (cfg.norm_placement == hica::NormPlacement::Inside ? "inside" : "outside") << "\n";
  out << "channels = " << cfg.channels << "\n";
  out << "image_size = " << cfg.image_size << "\n";
  out << "organs = " << cfg.organs << "\n";
  out << "grid_cell = " << cfg.grid_cell << "\n";
  out << "test_episodes = " << cfg.test_episodes << "\n";
  out << "test_seed = " << cfg.test_seed << "\n";
  out << "threads = " << cfg.threads << "\n";
  out << "out_dir = " << cfg.out_dir << "\n";
  out << "source = "
      << (cfg.source == episodes::EpisodeSource::SupervisedPhantom ? "supervised_phantom"
                                                                   : "ssl_superpixel")
      << "\n";
  out << "superpixel_count = " << cfg.superpixel_count << "\n";
  return out.str();
}

}  // namespace bro::config
