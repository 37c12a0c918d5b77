#include <iostream>

#include "retseg/cli.hpp"

int main(int argc, char** argv) { return retseg::cli::run(argc, argv, std::cout, std::cerr); }
