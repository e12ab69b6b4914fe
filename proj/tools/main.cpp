#include "cli.hpp"

int main(int argc, char** argv) { return proclip::run_cli(argc, argv); }
