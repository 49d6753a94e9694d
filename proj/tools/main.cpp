#include "talk/cli.hpp"

int main(int argc, char** argv) { return talk::cli_main(argc, argv); }
