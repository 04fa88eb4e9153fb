// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wnprobe::cli {

// Parses and runs one command. Returns the process exit code:
// 0 success, 2 input error, 3 numerical degeneracy, 4 search failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wnprobe::cli
