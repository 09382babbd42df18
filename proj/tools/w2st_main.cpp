#include <iostream>
#include <string>
#include <vector>

#include "w2st/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return w2st::run_cli(args, std::cout, std::cerr);
}
