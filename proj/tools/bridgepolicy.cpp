#include "bridgepolicy/cli.hpp"

int main(int argc, char** argv) {
  bridgepolicy::cli::tune_allocator();
  return bridgepolicy::cli::dispatch(argc, argv);
}
