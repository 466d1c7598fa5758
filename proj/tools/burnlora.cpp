// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "burnlora/cli/cli.hpp"

int main(int argc, char** argv) { return burnlora::cli::run(argc, argv, std::cout, std::cerr); }
