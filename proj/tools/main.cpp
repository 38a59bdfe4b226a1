#include <iostream>

#include "bd3mg/cli.hpp"

int main(int argc, char** argv) { return bd3mg::run_cli(argc, argv, std::cout, std::cerr); }
