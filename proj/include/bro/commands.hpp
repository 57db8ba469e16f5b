#pragma once

#include <iosfwd>
#include <string>

#include "bro/common.hpp"

namespace bro::commands {

inline constexpr const char* kVersion = "0.1.0";

/// Every command writes a run manifest into its output directory before doing
/// any work, then maps exceptions to exit codes: 0 success, 1 runtime
/// failure, 2 usage/config error. The BRO_SEED environment variable, when
/// set, overrides the seed of any loaded train config.

int cmd_train(const std::string& config_path, std::ostream& out, std::ostream& err);

int cmd_eval(const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& out_dir, std::ostream& out, std::ostream& err);

int cmd_ablate(const std::string& config_path, std::ostream& out, std::ostream& err);

int cmd_spectrum(const std::string& dir_a, const std::string& dir_b, const std::string& out_dir,
                 std::ostream& out, std::ostream& err);

/// Runs the spectrum comparison on the built-in broadband vs low-pass corpora.
int cmd_spectrum_demo(const std::string& out_dir, std::ostream& out, std::ostream& err);

/// Dumps a reproducible episode dataset (PGM images plus manifest).
int cmd_episodes(const std::string& config_path, Index count, std::ostream& out,
                 std::ostream& err);

}  // namespace bro::commands
