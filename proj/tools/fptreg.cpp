#include <iostream>
#include <string>
#include <vector>

#include "fptreg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return fptreg::cli::run(args, std::cout, std::cerr);
}
