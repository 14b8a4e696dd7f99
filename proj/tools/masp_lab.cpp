#include <iostream>

#include "masp/harness.hpp"

int main(int argc, char** argv) { return masp::run_cli(argc, argv, std::cout, std::cerr); }
