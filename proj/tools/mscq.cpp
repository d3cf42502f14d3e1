#include <iostream>

#include "mscq/cli.hpp"

int main(int argc, char** argv) {
    return mscq::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
