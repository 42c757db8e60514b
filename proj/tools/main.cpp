#include <iostream>

#include "tcja/cli.hpp"

int main(int argc, char** argv) { return tcja::run_cli(argc, argv, std::cout, std::cerr); }
