#include <string>
#include <vector>

#include "dflnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dflnet::run_cli(args);
}
