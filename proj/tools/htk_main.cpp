#include "htk/cli.hpp"

int main(int argc, char** argv) { return htk::cli::run(argc, argv); }
