#include "spatext/cli.hpp"

int main(int argc, char** argv) { return spatext::run_cli(argc, argv); }
