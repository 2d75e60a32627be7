#include "roads/cli.hpp"

int main(int argc, char** argv) { return roads::run_cli(argc, argv); }
