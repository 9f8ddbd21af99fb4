#include <iostream>

#include "cmsr/cli.hpp"

int main(int argc, char** argv) { return cmsr::cli::run(argc, argv, std::cout, std::cerr); }
