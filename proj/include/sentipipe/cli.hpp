#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sentipipe {

// Exit codes: 0 success, 1 runtime/I-O failure, 2 usage or input error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Runs the command-line front end. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
            std::ostream& err);

}  // namespace sentipipe
