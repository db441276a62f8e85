#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace trip::cli {

enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,
  exit_data = 2,
  exit_divergence = 3,
  exit_verify_failed = 4,
  exit_verify_refused = 5,
};

/// Runs the command line `args` (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace trip::cli
