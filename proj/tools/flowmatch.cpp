#include <iostream>

#include "flowmatch/harness.hpp"

int main(int argc, char** argv) { return flowmatch::harness::run_cli(argc, argv, std::cout, std::cerr); }
