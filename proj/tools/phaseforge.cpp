#include <iostream>

#include "phaseforge/cli.hpp"

int main(int argc, char** argv) { return phaseforge::cli::dispatch(argc, argv, std::cout, std::cerr); }
