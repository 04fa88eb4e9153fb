// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "wnprobe_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return wnprobe::cli::run(args, std::cout, std::cerr);
}
