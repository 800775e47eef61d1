#include "silt/cli.hpp"

int main(int argc, char** argv) { return silt::cli::run(argc, argv); }
