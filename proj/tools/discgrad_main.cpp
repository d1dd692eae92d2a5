#include <string>
#include <vector>

#include "discgrad/cli.hpp"

int main(int argc, char** argv) {
  return discgrad::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
