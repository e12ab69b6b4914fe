#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace proclip {

// Exit codes of the command-line surface.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitValidation = 4;

// `args` excludes the program name. Errors are reported on `err` as a single
// line: "error: <kind>: <detail>".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace proclip
