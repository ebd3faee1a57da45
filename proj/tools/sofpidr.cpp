#include <iostream>

#include "sofpi/cli.hpp"

int main(int argc, char** argv) {
  return sofpi::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
