#include <iostream>
#include <string>
#include <vector>

#include "starlink/cli.hpp"

int main(int argc, char** argv) {
    return starlink::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
