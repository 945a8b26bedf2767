#include <iostream>

#include "fishgrade/cli.hpp"

int main(int argc, char** argv) {
  return fishgrade::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
