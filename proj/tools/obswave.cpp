#include "obswave/cli.hpp"

int main(int argc, char** argv) { return obswave::cli::main(argc, argv); }
