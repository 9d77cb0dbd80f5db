#include "tsconceal/cli.hpp"

int main(int argc, char** argv) { return tsconceal::run_cli(argc, argv); }
