#include "hads/cli.hpp"
#include "hads/trainer.hpp"

int main(int argc, char** argv) {
    hads::tune_allocator();
    return hads::run_cli(argc, argv);
}
