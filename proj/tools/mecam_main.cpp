#include "mecam/cli.hpp"

int main(int argc, char** argv) { return mecam::run_cli(argc, argv); }
