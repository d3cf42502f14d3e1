#pragma once

// Command-line front end. `args` excludes the program name.

#include <iosfwd>
#include <string>
#include <vector>

namespace mscq {

enum ExitCode : int {
    kExitOk = 0,
    kExitVerifyFailed = 1,
    kExitIo = 2,
    kExitShape = 3,
    kExitCapacity = 4,
    kExitNumeric = 5,
};

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mscq
