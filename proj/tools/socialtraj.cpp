#include <iostream>

#include "socialtraj/cli.hpp"

int main(int argc, char** argv) { return socialtraj::run_cli(argc, argv, std::cout, std::cerr); }
