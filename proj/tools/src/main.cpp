#include <iostream>

#include "pedmr/cli.hpp"

int main(int argc, char** argv) { return pedmr::cli::run(argc, argv, std::cout, std::cerr); }
