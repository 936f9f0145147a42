#include <iostream>

#include "imagine/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return imagine::run_cli(args, std::cout, std::cerr);
}
