#include "pdeseq/cli.hpp"

int main(int argc, char** argv) {
    return pdeseq::cli::run(argc, argv);
}
