#include "disclabel/cli.hpp"

int main(int argc, char** argv) { return disclabel::run(argc, argv); }
