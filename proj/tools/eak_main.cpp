#include "eak/cli.hpp"

int main(int argc, char** argv) {
    return eak::cli::run(argc, argv);
}
