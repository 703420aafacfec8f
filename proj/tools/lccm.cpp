#include "lccm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return lccm::run_cli(argc, argv, std::cout, std::cerr); }
