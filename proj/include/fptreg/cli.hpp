#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fptreg::cli {

// Exit codes.
inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_data = 2;
inline constexpr int exit_numerical = 3;

// Runs the command line `args` (args[0] is the program name). Subcommands:
// synth, train, register, benchmark, eval. Every subcommand accepts
// --config FILE, a TOML file with one [section] per subcommand whose keys are
// the long option names; options given on the command line win.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fptreg::cli
