#include <iostream>
#include <string>
#include <vector>

#include "autotune/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return autotune::cli::run(args, std::cout, std::cerr);
}
