#include <string>
#include <vector>

#include "mnist1d/cli.hpp"
#include "mnist1d/platform.hpp"

int main(int argc, char** argv) {
  mnist1d::tune_allocator();
  return mnist1d::run_cli(std::vector<std::string>(argv, argv + argc));
}
