#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "urep/text.hpp"

namespace urep {

/// Stable process exit codes.
enum ExitCode : int {
  exit_ok = 0,
  exit_failure = 1,
  exit_config = 2,
  exit_io = 3,
  exit_search = 4,
  exit_compatibility = 5,
  exit_missing_labels = 6,
  exit_explain = 7,
};

/// Settings shared by the training and comparison commands. Every field is
/// optional so a config file and command-line flags can be layered; flags win.
///
/// Config file keys: seed, epochs, patience, batch_size, lr, plateau,
/// noise_sigma, freeze_backbone, tasks, weights, hidden, dropout, optimizer,
/// kernel, source_task, space, timing.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> patience;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<bool> plateau;
  std::optional<double> noise_sigma;
  std::optional<bool> freeze_backbone;
  std::optional<std::string> tasks;
  std::optional<std::string> weights;
  std::optional<int> hidden;
  std::optional<double> dropout;
  std::optional<std::string> optimizer;
  std::optional<int> kernel;
  std::optional<std::string> source_task;
  std::optional<std::string> space;
  std::optional<bool> timing;

  /// Throws ConfigError naming the first unknown key.
  static RunConfig from_key_values(const KeyValues& kv);
  /// Fields set in `flags` replace ours.
  void override_with(const RunConfig& flags);
};

/// Runs one `urep` command line. Output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace urep
