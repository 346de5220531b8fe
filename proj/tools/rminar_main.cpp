#include <iostream>

#include "rminar/cli.hpp"

int main(int argc, char** argv) { return rminar::run_cli(argc, argv, std::cout, std::cerr); }
