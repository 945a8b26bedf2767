#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fishgrade {

enum class CommandKind { Simulate, Segment, Detect, Classify, Score, Run, Evaluate, Serve };

// Parsed command line. Only the fields of `kind` are meaningful.
struct Command {
  CommandKind kind = CommandKind::Run;
  std::string config;       // --config, or $FISHGRADE_CONFIG
  std::string channel_map;  // --channel-map
  unsigned threads = 0;
  std::uint64_t seed = 1;

  std::string input, out, report, truth, nuclei, signals, overlay;

  // simulate
  std::string out_truth, maps_dir;
  bool noiseless = false;
  int width = 0, height = 0;  // 0 keeps the simulator default
  std::vector<double> mix;    // normal, low_amp, high_amp, artifact

  // score overrides
  std::optional<double> ratio_threshold, high_amp_copies;
  std::optional<int> min_nuclei;
  std::optional<bool> include_discrepant;

  // evaluate
  double nucleus_iou = 0.5, signal_iou = 0.5;
  std::optional<double> min_precision, min_recall, min_map;
  bool require_status = false;

  // serve
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir, token;
};

struct ParseResult {
  std::optional<Command> command;  // empty when parsing ended early
  int exit_code = 0;               // meaningful when command is empty
};

// args excludes the program name.
ParseResult parse_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// 0 success, 1 slide-fatal error or failed --min-* gate, 2 usage/config error.
int execute(const Command& cmd, std::ostream& out, std::ostream& err);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fishgrade
