#include "skt/cli.hpp"

int main(int argc, char** argv) { return skt::run_cli(argc, argv); }
