#include "ynet/cli.hpp"

int main(int argc, char** argv) { return ynet::run_cli(argc, argv); }
