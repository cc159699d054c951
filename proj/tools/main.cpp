#include "hmcgeo/cli.hpp"

int main(int argc, char** argv) { return hmcgeo::run_cli(argc, argv); }
