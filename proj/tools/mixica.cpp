#include "mixica/cli.hpp"

int main(int argc, char** argv) { return mixica::cli::run(argc, argv); }
