#include "avan/cli.hpp"

int main(int argc, char** argv) { return avan::cli::run(argc, argv); }
