#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mdg::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kDataError = 3, kNumericFailure = 4 };

// Runs one command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdg::cli
