#include <iostream>

#include "cftraj/cli.hpp"

int main(int argc, char** argv) {
  return cftraj::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
