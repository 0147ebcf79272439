#include <string>
#include <vector>

#include "tensorfact/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tensorfact::cli_main(args);
}
