#include <iostream>

#include "rxlora/cli.hpp"

int main(int argc, char** argv) { return rxlora::run_cli(argc, argv, std::cout, std::cerr); }
