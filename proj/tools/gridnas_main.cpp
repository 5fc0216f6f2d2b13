#include <iostream>

#include "gridnas/cli.hpp"

int main(int argc, char** argv) {
  return gridnas::run_cli_argv(argc, argv, std::cout, std::cerr);
}
