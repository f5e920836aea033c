#include "rosen/cli.hpp"

int main(int argc, char** argv) { return rosen::run_cli(argc, argv); }
