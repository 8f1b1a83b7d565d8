#pragma once

#include <exception>
#include <iosfwd>

namespace devlang {

// Exit codes:
//   0  success
//   1  gradient check or table replication failed; I/O error
//   2  configuration error or bad command line
//   3  data error
//   4  training or model error
//   5  stopping point selection phase aborted
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitTraining = 4,
  kExitPhaseOne = 5,
};

int exit_code_for(const std::exception& error);

// Subcommands: train, run-experiment, replicate-tables, gradcheck, synth-data.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace devlang
