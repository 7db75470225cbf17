#include "crashbench/cli.hpp"

int main(int argc, char** argv) { return crashbench::cli_main(argc, argv); }
