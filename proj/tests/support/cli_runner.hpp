#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "nsdesk/cli/cli.hpp"

namespace nsdesk::testing {

struct CliResult {
    int code = 0;
    std::string out, err;
};

inline CliResult run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "nsdesk");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    CliResult r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

}  // namespace nsdesk::testing
