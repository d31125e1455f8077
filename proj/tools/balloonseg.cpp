#include <string>
#include <vector>

#include "balloonseg/cli.hpp"

int main(int argc, char** argv) {
  return bseg::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
