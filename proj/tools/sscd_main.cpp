#include <iostream>
#include <string>
#include <vector>

#include "sscd/cli.hpp"

int main(int argc, char** argv) {
    return sscd::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
