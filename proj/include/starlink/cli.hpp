#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace starlink {

enum ExitStatus : int { kExitOk = 0, kExitUsage = 1, kExitInput = 2, kExitNumeric = 3 };

// args[0] is the program name. The summary record goes to out, diagnostics to err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace starlink
