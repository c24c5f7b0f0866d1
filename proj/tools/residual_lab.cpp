#include "residual_lab/cli.hpp"
#include "residual_lab/train.hpp"

int main(int argc, char** argv) {
    rlab::retain_freed_memory();
    return rlab::cli::run(argc, argv);
}
