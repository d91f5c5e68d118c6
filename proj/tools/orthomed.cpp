#include "orthomed/cli.hpp"

int main(int argc, char** argv) { return orthomed::cli::main(argc, argv); }
