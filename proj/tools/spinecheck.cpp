#include <iostream>

#include "spinecheck/cli.hpp"

int main(int argc, char** argv) {
  return spinecheck::cli::run(argc, argv, std::cout, std::cerr);
}
