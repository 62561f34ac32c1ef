#include "flare/cli.hpp"

int main(int argc, char** argv) {
  return flare::run_cli({argv + 1, argv + argc});
}
