#include "brainit/cli.hpp"

int main(int argc, char** argv) { return brainit::cli::run_cli(argc, argv); }
