#include "ticlab/cli.hpp"

int main(int argc, char** argv) { return ticlab::cli_main(argc, argv); }
