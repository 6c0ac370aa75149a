#include "psp/cli.hpp"

int main(int argc, char** argv) { return psp::cli_main(argc, argv); }
