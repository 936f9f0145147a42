#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace imagine {

/// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;  // bad arguments, bad config, missing inputs
inline constexpr int kExitFailed = 2;   // the work itself failed

/// Runs one subcommand. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace imagine
