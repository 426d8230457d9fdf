#include <iostream>

#include "dub/cli.hpp"

int main(int argc, char** argv) { return dub::run_cli(argc, argv, std::cout, std::cerr); }
