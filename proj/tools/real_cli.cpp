#include <iostream>

#include "real/cli.hpp"

int main(int argc, char** argv) { return real::run_cli(argc, argv, std::cout, std::cerr); }
