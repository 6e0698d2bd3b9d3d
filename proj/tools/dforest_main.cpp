#include <string>
#include <vector>

#include "dforest/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dforest::cli::run(args);
}
