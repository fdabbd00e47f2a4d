#pragma once

// Command line front end, callable in process. Subcommands: gen-data, train,
// predict, eval, cluster. Exit codes: 0 success, 1 usage/config/io error,
// 2 numerical failure.

#include <string>
#include <vector>

namespace htk::cli {

int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace htk::cli
