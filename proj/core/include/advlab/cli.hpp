#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace advlab {

/// Parsed command line for one advlab invocation. Command handlers return a
/// process exit code: 0 iff every requested output was written.
struct CliOptions {
  std::string config_path;             // --config FILE
  std::vector<std::string> overrides;  // --set key=value (repeatable)
  std::string out_dir;                 // --out DIR
  bool has_seed = false;               // --seed N given
  std::uint64_t seed = 0;
  std::string checkpoint;               // --checkpoint FILE (eval, corrupt --eval)
  std::vector<std::string> checkpoints;  // sweep subjects, baseline first
  std::vector<std::string> inputs;       // report-merge input CSVs
  std::string output_file;               // report-merge -o FILE
  bool resume = false;                   // train --resume
  bool with_eval = false;                // corrupt --eval
};

int cmd_train(const CliOptions& opt);
int cmd_pretrain(const CliOptions& opt);
int cmd_eval(const CliOptions& opt);
int cmd_sweep(const CliOptions& opt);
int cmd_corrupt(const CliOptions& opt);
int cmd_report_merge(const CliOptions& opt);

/// Full argv-level entry point (subcommand dispatch + flag parsing); the
/// advlab binary is a thin wrapper around this.
int run_cli(int argc, const char* const* argv);

}  // namespace advlab
