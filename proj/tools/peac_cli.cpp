#include "peac/cli.hpp"

int main(int argc, char** argv) { return peac::run(argc, argv); }
