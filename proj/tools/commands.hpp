#pragma once

#include <string>
#include <vector>

namespace possum::cli {

enum ExitCode { Ok = 0, ConfigError = 2, StageError = 3, NonConvergence = 4 };

/// Parses arguments (argv[0] is the program name) and runs one subcommand.
int run(const std::vector<std::string>& args);

}  // namespace possum::cli
