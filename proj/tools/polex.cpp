#include <iostream>

#include "polex/pipeline.hpp"

int main(int argc, char** argv) { return polex::run_cli(argc, argv, std::cout, std::cerr); }
