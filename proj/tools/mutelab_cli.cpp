#include "mutelab/cli/cli.hpp"
#include "mutelab/numerics/blas_runtime.hpp"

int main(int argc, char** argv) {
    mutelab::ensure_blas_runtime(argv);
    return mutelab::cli::run_cli(argc, argv);
}
