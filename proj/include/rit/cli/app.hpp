#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rit::cli {

/// Runs the command line `args` (without the program name). Returns the
/// process exit code: 0 on success, 1 on errors or failed checks, 2 on
/// usage errors.
int run_app(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rit::cli
