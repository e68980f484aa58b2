#include "ssmg/cli.hpp"

int main(int argc, char** argv) {
  return ssmg::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
