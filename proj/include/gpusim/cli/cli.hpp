#pragma once

#include <string>
#include <vector>

namespace gpusim {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,       // bad flags, config, manifest, PTX, launch
  kExitMachineFault = 3,
  kExitDeadlock = 4,
  kExitCheckFailed = 5,
  kExitCheckpoint = 6,  // position out of range, bad or mismatched bundle
  kExitDivergence = 7,  // diff found a difference
};

// Runs one invocation; args excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace gpusim
