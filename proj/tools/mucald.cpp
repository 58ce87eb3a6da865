#include <iostream>

#include "mucald/cli.hpp"

int main(int argc, char** argv) {
  return mucald::cli_main({argv + 1, argv + argc}, std::cout, std::cerr);
}
