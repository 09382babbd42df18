#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace w2st {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kDivergence = 3;
}  // namespace exit_code

/// Runs the command-line tool. `args` excludes the program name.
/// Subcommands: synth-data, train, generate, evaluate, report.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace w2st
