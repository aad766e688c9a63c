#pragma once

#include <ostream>

namespace nsdesk::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitDivergence = 3;

// Entry point of the `nsdesk` tool: gen-data, train, eval, attack, verify,
// project and report. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nsdesk::cli
