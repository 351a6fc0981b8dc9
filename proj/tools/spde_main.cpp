#include "spde/cli.hpp"

int main(int argc, char** argv) { return spde::cli_main(argc, argv); }
