#include <iostream>

#include "capsnet/cli.hpp"

int main(int argc, char** argv) { return capsnet::run_cli(argc, argv, std::cout, std::cerr); }
