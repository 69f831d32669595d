#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "advlab/eval/report.hpp"

namespace advlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct Options {
  std::filesystem::path config;
  bool adversarial = false;
  std::vector<std::filesystem::path> models;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<ReportFormat> format;
  std::optional<std::filesystem::path> run_dir;
};

struct Streams {
  std::ostream& out;  // machine-readable results and summaries
  std::ostream& err;  // progress and diagnostics
};

void cmd_synth(const Options& opts, Streams io);
void cmd_train(const Options& opts, Streams io);
void cmd_attack(const Options& opts, Streams io);
void cmd_transfer(const Options& opts, Streams io);
void cmd_report(const Options& opts, Streams io);

/// Parses `args` (program name first), runs the subcommand and maps errors
/// to exit codes: 0 success, 1 runtime failure, 2 configuration or usage
/// error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace advlab::cli
