#include <iostream>

#include "flood/cli.hpp"

int main(int argc, char** argv) {
  return flood::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
