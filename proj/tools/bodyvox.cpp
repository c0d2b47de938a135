#include "bodyvox/evalcli.hpp"

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return bodyvox::evalcli::run_cli(args, std::cout, std::cerr);
}
