#include <scorecast/cli.hpp>

int main(int argc, char** argv) { return scorecast::run_cli(argc, argv); }
