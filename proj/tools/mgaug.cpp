#include "mgaug/cli.hpp"

int main(int argc, char** argv) { return mgaug::run_cli(argc, argv); }
