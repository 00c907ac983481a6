#include "turbmit/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return turbmit::cli::run(std::move(args));
}
