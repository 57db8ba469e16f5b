#include "bro/commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <vector>

#include "bro/config.hpp"
#include "bro/episodes.hpp"
#include "bro/spectrum.hpp"
#include "bro/trainer.hpp"

namespace fs = std::filesystem;

namespace bro::commands {

namespace {

int run_guarded(std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

void apply_env_seed(config::TrainConfig& cfg) {
  if (const char* env = std::getenv("BRO_SEED")) {
    try {
      std::size_t pos = 0;
      const std::uint64_t seed = std::stoull(env, &pos);
      if (pos != std::string(env).size()) throw std::invalid_argument(env);
      cfg.seed = seed;
    } catch (const std::exception&) {
      throw ConfigError(std::string("BRO_SEED: '") + env + "' is not an unsigned integer");
    }
  }
}

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const std::string& config_path, std::uint64_t seed) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "manifest.txt").string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "command " << command << "\n";
  out << "config " << config_path << "\n";
  out << "seed " << seed << "\n";
  out << "out " << out_dir << "\n";
  out << "version bro " << kVersion << "\n";
  if (!out) throw IoError("failed while writing " + path);
}

std::string fmt4(Scalar v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4) << v;
  std::string text = out.str();
  while (text.size() > 1 && text.back() == '0' && text[text.size() - 2] != '.') text.pop_back();
  return text;
}

std::string fmt6(Scalar v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << v;
  return out.str();
}

void print_report(std::ostream& out, const spectrum::SpectrumReport& report,
                  const std::vector<std::string>& names) {
  out << "group " << report.group_label << "\n";
  for (std::size_t i = 0; i < report.per_image_entropy.size(); ++i) {
    out << "image " << names[i] << " entropy " << fmt6(report.per_image_entropy[i]) << "\n";
  }
  out << "fit mean " << fmt6(report.fitted_mean) << " std " << fmt6(report.fitted_std) << "\n";
}

void write_pdf_curve(const std::string& out_dir, const std::string& name,
                     const spectrum::SpectrumReport& report) {
  if (out_dir.empty()) return;
  spectrum::NormalFit fit;
  fit.mean = report.fitted_mean;
  fit.std = report.fitted_std;
  const std::string path = (fs::path(out_dir) / ("pdf_" + name + ".dat")).string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const Scalar lo = fit.mean - 4 * fit.std, hi = fit.mean + 4 * fit.std;
  for (int i = 0; i <= 100; ++i) {
    const Scalar x = lo + (hi - lo) * static_cast<Scalar>(i) / 100.0;
    out << fmt6(x) << " " << fmt6(spectrum::normal_pdf(x, fit)) << "\n";
  }
}

void spectrum_verdict(std::ostream& out, const spectrum::SpectrumReport& a,
                      const spectrum::SpectrumReport& b) {
  if (std::abs(a.fitted_mean - b.fitted_mean) <= 1e-12) {
    out << "order equal\n";
  } else if (a.fitted_mean > b.fitted_mean) {
    out << "order A higher\n";
  } else {
    out << "order B higher\n";
  }
}

std::vector<std::string> list_pgm_files(const std::string& dir) {
  if (!fs::is_directory(dir)) {
    throw ConfigError("'" + dir + "' is not a directory");
  }
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.size() < 2) {
    throw ConfigError("directory '" + dir + "' holds " + std::to_string(files.size()) +
                      " PGM images; need at least 2");
  }
  return files;
}

}  // namespace

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    config::TrainConfig cfg = config::load_train_config(config_path);
    apply_env_seed(cfg);
    write_run_manifest(cfg.out_dir, "train", config_path, cfg.seed);
    const std::string log_path = (fs::path(cfg.out_dir) / "train.log").string();
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot open " + log_path + " for writing");
    trainer::Model model = trainer::train(cfg, &log);
    const std::string ckpt_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();
    trainer::save_checkpoint(ckpt_path, model, cfg);
    out << "checkpoint " << ckpt_path << "\n";
  });
}

int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& out_dir, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    trainer::Checkpoint ckpt = trainer::load_checkpoint(checkpoint_path);
    write_run_manifest(out_dir, "eval", checkpoint_path, ckpt.cfg.seed);
    const auto entries = episodes::read_manifest(manifest_path);
    if (entries.empty()) throw ConfigError("no episodes in manifest " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    auto resolve = [&](const std::string& p) {
      return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    std::vector<episodes::Episode> eps;
    eps.reserve(entries.size());
    for (const auto& e : entries) {
      episodes::Episode ep;
      ep.support_image = episodes::read_pgm_image(resolve(e.support_image));
      ep.support_mask = episodes::read_pgm_mask(resolve(e.support_mask));
      ep.query_image = episodes::read_pgm_image(resolve(e.query_image));
      ep.query_mask = episodes::read_pgm_mask(resolve(e.query_mask));
      ep.class_id = e.class_id;
      eps.push_back(std::move(ep));
    }
    const trainer::EvalResult res = trainer::evaluate(ckpt.model, ckpt.cfg, eps);
    for (std::size_t i = 0; i < res.dice.size(); ++i) {
      out << "dice " << entries[i].id << " " << fmt4(res.dice[i]) << "\n";
    }
    out << "mean " << fmt4(res.mean) << "\n";
  });
}

int cmd_ablate(const std::string& config_path, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    config::TrainConfig base = config::load_train_config(config_path);
    apply_env_seed(base);
    write_run_manifest(base.out_dir, "ablate", config_path, base.seed);

    struct Variant {
      const char* name;
      void (*tweak)(config::TrainConfig&);
    };
    const Variant variants[6] = {
        {"full", [](config::TrainConfig&) {}},
        {"no_feac", [](config::TrainConfig& c) { c.no_feac = true; }},
        {"no_hica", [](config::TrainConfig& c) { c.no_hica = true; }},
        {"no_ad", [](config::TrainConfig& c) { c.no_ad = true; }},
        {"no_b_delta", [](config::TrainConfig& c) { c.no_b_delta = true; }},
        {"no_adv_loss", [](config::TrainConfig& c) { c.no_adv_loss = true; }},
    };

    const std::vector<episodes::Episode> suite = trainer::make_test_episodes(base);
    std::ostringstream table;
    for (const Variant& v : variants) {
      config::TrainConfig cfg = base;
      v.tweak(cfg);
      trainer::Model model = trainer::train(cfg, nullptr);
      const trainer::EvalResult res = trainer::evaluate(model, cfg, suite);
      table << "variant " << v.name << " dice " << fmt4(res.mean) << "\n";
    }
    out << table.str();
    const std::string table_path = (fs::path(base.out_dir) / "ablation.txt").string();
    std::ofstream table_file(table_path);
    if (!table_file) throw IoError("cannot open " + table_path + " for writing");
    table_file << table.str();
  });
}

int cmd_spectrum(const std::string& dir_a, const std::string& dir_b, const std::string& out_dir,
                 std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    if (!out_dir.empty()) write_run_manifest(out_dir, "spectrum", dir_a + " " + dir_b, 0);
    const auto files_a = list_pgm_files(dir_a);
    const auto files_b = list_pgm_files(dir_b);
    auto load = [](const std::vector<std::string>& files) {
      std::vector<Matrix> images;
      images.reserve(files.size());
      for (const auto& f : files) images.push_back(episodes::read_pgm_image(f));
      return images;
    };
    const auto [report_a, report_b] =
        spectrum::compare_groups(load(files_a), load(files_b), "A", "B");
    print_report(out, report_a, files_a);
    print_report(out, report_b, files_b);
    spectrum_verdict(out, report_a, report_b);
    write_pdf_curve(out_dir, "a", report_a);
    write_pdf_curve(out_dir, "b", report_b);
  });
}

int cmd_spectrum_demo(const std::string& out_dir, std::ostream& out, std::ostream& err) {
  return run_guarded(err, [&] {
    if (!out_dir.empty()) write_run_manifest(out_dir, "spectrum-demo", "-", 0);
    const Index n = 50, size = 64;
    std::vector<Matrix> broadband, lowpass;
    std::vector<std::string> names_a, names_b;
    for (Index i = 0; i < n; ++i) {
      broadband.push_back(
          spectrum::broadband_texture(mix_seed(101, static_cast<std::uint64_t>(i)), size, size));
      lowpass.push_back(
          spectrum::lowpass_texture(mix_seed(202, static_cast<std::uint64_t>(i)), size, size));
      names_a.push_back("broadband/" + std::to_string(i));
      names_b.push_back("lowpass/" + std::to_string(i));
    }
    const auto [report_a, report_b] =
        spectrum::compare_groups(broadband, lowpass, "broadband", "lowpass");
    print_report(out, report_a, names_a);
    print_report(out, report_b, names_b);
    spectrum_verdict(out, report_a, report_b);
    write_pdf_curve(out_dir, "a", report_a);
    write_pdf_curve(out_dir, "b", report_b);
  });
}

int cmd_episodes(const std::string& config_path, Index count, std::ostream& out,
                 std::ostream& err) {
  return run_guarded(err, [&] {
    config::TrainConfig cfg = config::load_train_config(config_path);
    apply_env_seed(cfg);
    write_run_manifest(cfg.out_dir, "episodes", config_path, cfg.seed);
    if (count <= 0) count = cfg.test_episodes;
    config::TrainConfig dump_cfg = cfg;
    dump_cfg.test_episodes = count;
    const auto eps = trainer::make_test_episodes(dump_cfg);
    std::vector<episodes::ManifestEntry> entries;
    for (std::size_t i = 0; i < eps.size(); ++i) {
      episodes::ManifestEntry e;
      e.id = i;
      e.class_id = eps[i].class_id;
      const std::string stem = "ep" + std::to_string(i);
      e.support_image = stem + "_support.pgm";
      e.support_mask = stem + "_support_mask.pgm";
      e.query_image = stem + "_query.pgm";
      e.query_mask = stem + "_query_mask.pgm";
      const fs::path dir(cfg.out_dir);
      episodes::write_pgm_image((dir / e.support_image).string(), eps[i].support_image);
      episodes::write_pgm_mask((dir / e.support_mask).string(), eps[i].support_mask);
      episodes::write_pgm_image((dir / e.query_image).string(), eps[i].query_image);
      episodes::write_pgm_mask((dir / e.query_mask).string(), eps[i].query_mask);
      entries.push_back(std::move(e));
    }
    const std::string manifest_path = (fs::path(cfg.out_dir) / "episodes.txt").string();
    episodes::write_manifest(manifest_path, entries);
    out << "episodes " << entries.size() << " " << manifest_path << "\n";
  });
}

}  // namespace bro::commands
