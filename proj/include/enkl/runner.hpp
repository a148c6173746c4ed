#pragma once

#include <string>
#include <vector>

#include "enkl/config.hpp"

namespace enkl {

struct RunResult {
  int exit_code = 0;
  std::string message;
  std::vector<std::string> artifacts;
};

// Dispatches a validated config to the training / discovery / simulation
// engines and writes the run artifacts (effective config snapshot, log.csv,
// per-command outputs) into config.out_dir. Failures flush whatever was
// produced and come back as a nonzero exit code with a one-line message.
RunResult run(const RunConfig& config);

}  // namespace enkl
