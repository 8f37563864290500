#include "sparsetx/cli.hpp"

int main(int argc, char** argv) { return sparsetx::cli::run(argc, argv); }
