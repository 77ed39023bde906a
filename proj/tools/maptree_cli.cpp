// maptree: command-line front end. Exit codes: 0 success, 2 usage, 3 input
// files, 4 numerical failure, 5 violated algorithmic precondition.
#include <iostream>
#include <string>
#include <vector>

#include "maptree/config.hpp"
#include "maptree/run.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  maptree::ParsedArgs parsed;
  try {
    parsed = maptree::parse_config(std::move(args));
  } catch (const maptree::Error& e) {
    std::cerr << "maptree: " << e.what() << "\nRun 'maptree --help' for usage.\n";
    return maptree::exit_code(e.code());
  }
  if (!parsed.config) {
    std::cout << parsed.help;
    return 0;
  }
  return maptree::execute(*parsed.config, std::cout, std::cerr);
}
