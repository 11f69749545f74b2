#include "vidrep/cli.hpp"

int main(int argc, char** argv) { return vidrep::run_cli(argc, argv); }
