#include <iostream>
#include <string>
#include <vector>

#include "dcbd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dcbd::cli::run_cli(args, std::cout, std::cerr);
}
