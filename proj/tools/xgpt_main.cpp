#include <vector>

#include "xgpt/cli.hpp"

int main(int argc, char** argv) {
    return xgpt::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
