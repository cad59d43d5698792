#include "tomotx/cli/commands.hpp"

int main(int argc, char** argv) { return tomotx::cli::run(argc, argv); }
