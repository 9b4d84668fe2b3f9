#include <string>
#include <vector>

#include "dog/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dog::cli::run(args);
}
