#include "synpair/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return synpair::run_cli(argc, argv, std::cout, std::cerr); }
