#include "iidm/cli/commands.hpp"

#include <iostream>

int main(int argc, char** argv) { return iidm::run_cli(argc, argv, std::cout, std::cerr); }
