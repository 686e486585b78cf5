#pragma once
// Command-line front end: prepare, train, synth, edit, evaluate.
//
// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.

#include <string>
#include <vector>

namespace ctxtts::cli {

int run_cli(int argc, char** argv);
// argv[0] is the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace ctxtts::cli
