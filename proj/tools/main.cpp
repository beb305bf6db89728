#include <string>
#include <vector>

#include "cfp/pipeline.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cfp::run_cli(args);
}
