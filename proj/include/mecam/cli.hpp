#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mecam {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

/// Runs `mecam <subcommand> ...`. argv[0] is the program name.
/// Never throws; failures are reported on `err` and mapped to an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace mecam
