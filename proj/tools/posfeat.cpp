#include "posfeat/cli.hpp"

int main(int argc, char** argv) { return posfeat::run_cli(argc, argv); }
