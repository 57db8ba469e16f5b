#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bro/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Background-fused prototype segmentation pipeline"};
  app.set_version_flag("--version", std::string("bro ") + bro::commands::kVersion);
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, manifest_path, out_dir, dir_a, dir_b;
  bro::Index count = 0;
  bool demo = false;

  CLI::App* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("config", config_path, "Config file")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on an episode manifest");
  eval->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required();
  eval->add_option("manifest", manifest_path, "Episode manifest")->required();
  eval->add_option("--out", out_dir, "Output directory")->default_val("eval_out");

  CLI::App* ablate = app.add_subcommand("ablate", "Train and score all ablation variants");
  ablate->add_option("config", config_path, "Config file")->required();

  CLI::App* spectrum =
      app.add_subcommand("spectrum", "Compare spectral entropy of two image directories");
  spectrum->add_option("dir_a", dir_a, "First image directory");
  spectrum->add_option("dir_b", dir_b, "Second image directory");
  spectrum->add_option("--out", out_dir, "Output directory for fitted curves");
  spectrum->add_flag("--demo", demo, "Use the built-in broadband vs low-pass corpora");

  CLI::App* episodes = app.add_subcommand("episodes", "Dump a reproducible episode dataset");
  episodes->add_option("config", config_path, "Config file")->required();
  episodes->add_option("--count", count, "Number of episodes (default: test_episodes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (train->parsed()) return bro::commands::cmd_train(config_path, std::cout, std::cerr);
  if (eval->parsed()) {
    return bro::commands::cmd_eval(checkpoint_path, manifest_path, out_dir, std::cout, std::cerr);
  }
  if (ablate->parsed()) return bro::commands::cmd_ablate(config_path, std::cout, std::cerr);
  if (spectrum->parsed()) {
    if (demo) return bro::commands::cmd_spectrum_demo(out_dir, std::cout, std::cerr);
    if (dir_a.empty() || dir_b.empty()) {
      std::cerr << "error: spectrum needs two directories (or --demo)\n";
      return 2;
    }
    return bro::commands::cmd_spectrum(dir_a, dir_b, out_dir, std::cout, std::cerr);
  }
  if (episodes->parsed()) return bro::commands::cmd_episodes(config_path, count, std::cout, std::cerr);
  return 2;
}
