#include "dpg/experiment/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return dpg::experiment::cli_main(argc, argv, std::cout, std::cerr);
}
