#include "g3dm/cli.hpp"

int main(int argc, char** argv) { return g3dm::cli::run(argc, argv); }
