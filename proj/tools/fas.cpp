#include "dsdg/cli.hpp"

int main(int argc, char** argv) { return dsdg::cli::fas_main(argc, argv); }
