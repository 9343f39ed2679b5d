#include <iostream>

#include "ape/cli.hpp"

int main(int argc, char** argv) { return ape::cli::run(argc, argv, std::cout, std::cerr); }
