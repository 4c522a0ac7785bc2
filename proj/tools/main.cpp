#include "grafuse/cli.hpp"

int main(int argc, char** argv) { return grafuse::cli::run(argc, argv); }
