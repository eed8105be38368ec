#include <string>
#include <vector>

#include "lmprobe/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return lmprobe::cli::run(args);
}
