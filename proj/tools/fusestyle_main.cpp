#include "fusestyle/cli.hpp"

int main(int argc, char** argv) { return fusestyle::run_cli(argc, argv); }
