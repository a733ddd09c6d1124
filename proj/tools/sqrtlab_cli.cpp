#include "sqrtlab/cli.hpp"

int main(int argc, char** argv) {
    return sqrtlab::cli::main_entry(std::vector<std::string>(argv + 1, argv + argc));
}
