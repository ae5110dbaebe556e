#include "gpusim/cli/cli.hpp"

int main(int argc, char** argv) { return gpusim::run_cli({argv + 1, argv + argc}); }
