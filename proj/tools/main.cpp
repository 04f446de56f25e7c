#include "cli.hpp"

int main(int argc, char** argv) { return mhd::cli::main(argc, argv); }
