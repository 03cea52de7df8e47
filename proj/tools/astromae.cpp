#include <string>
#include <vector>

#include "astromae/train.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return astromae::run_cli(args);
}
