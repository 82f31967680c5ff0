#include "pwkd/cli.hpp"

int main(int argc, char** argv) { return pwkd::run_cli(argc, argv); }
