#include "stwa/cli.hpp"

int main(int argc, char** argv) { return stwa::cli::run(argc, argv); }
