#include <string>
#include <vector>

#include "dpq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dpq::run_cli(args);
}
