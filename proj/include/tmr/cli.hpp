#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tmr/tuning.hpp"

namespace tmr::cli {

enum class Command { generate, repair, tune, recover, eval };
enum class Method { slrr, gravity, tomogravity };

struct RunConfig {
  Command command = Command::recover;
  std::filesystem::path instance_dir;
  std::filesystem::path output_dir;
  Method method = Method::slrr;
  SolverParams params;
  CvPlan cv;
  int candidates = 50;
  /// Intervals per period; also the generator's daily profile length.
  std::optional<int> period;
  std::uint64_t seed = 1;
  SynthConfig synth;
  double threshold_factor = 10.0;
  bool in_place = false;
};

/// Executes one command, writing its artifacts. Throws on any failure.
/// Returns the number of warnings recorded (non-converged intervals,
/// infeasible links).
int run(const RunConfig& config);

/// Parses argv-style arguments (without the program name), runs the command
/// and reports failures as a single `error: <kind>: <message>` line on
/// `err`. Returns the process exit status.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace tmr::cli
