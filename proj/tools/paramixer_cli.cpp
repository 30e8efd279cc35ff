#include <iostream>
#include <string>
#include <vector>

#include "paramixer/harness.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return paramixer::run_cli(args, std::cout, std::cerr);
}
