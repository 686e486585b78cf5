#include "ctxtts/cli.hpp"

int main(int argc, char** argv) { return ctxtts::cli::run_cli(argc, argv); }
