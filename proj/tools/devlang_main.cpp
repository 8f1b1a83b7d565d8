#include <iostream>

#include "devlang/cli.hpp"

int main(int argc, char** argv) { return devlang::run_cli(argc, argv, std::cout, std::cerr); }
