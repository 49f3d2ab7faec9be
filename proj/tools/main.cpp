#include "rlpipe/app.hpp"

int main(int argc, char** argv) {
    return rlpipe::cli::run_main(argc, argv);
}
