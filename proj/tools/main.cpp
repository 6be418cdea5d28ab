#include "cellgraph/cli.hpp"

int main(int argc, char** argv) { return cellgraph::run_cli(argc, argv); }
