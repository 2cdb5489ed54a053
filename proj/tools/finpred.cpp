#include <iostream>

#include "finpred/cli.hpp"

int main(int argc, char** argv) { return finpred::run_cli(argc, argv, std::cout, std::cerr); }
