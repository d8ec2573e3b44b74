#include <iostream>
#include <string>
#include <vector>

#include "vins/cli.hpp"

int main(int argc, char** argv) {
  return vins::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
