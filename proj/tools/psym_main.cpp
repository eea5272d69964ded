#include "psym/cli/commands.hpp"

int main(int argc, char** argv) { return psym::cli::run_cli(argc, argv); }
