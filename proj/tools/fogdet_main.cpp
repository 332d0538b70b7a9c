#include "fogdet/cli.hpp"

int main(int argc, char** argv) { return fogdet::run_cli(argc, argv); }
