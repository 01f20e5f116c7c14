#include <iostream>

#include "windformer/cli.hpp"

int main(int argc, char** argv) { return windformer::cli_main(argc, argv, std::cout, std::cerr); }
