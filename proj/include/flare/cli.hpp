#pragma once

#include <string>
#include <vector>

namespace flare {

// Runs one command-line invocation (arguments without the program name) and
// returns the process exit code: 0 iff every requested artifact was written.
// Subcommands: generate, train, train-multi, eval, gridsearch, gradcheck,
// bench.  Set FLARE_LOG=1 for progress lines on stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace flare
