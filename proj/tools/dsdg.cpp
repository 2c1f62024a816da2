#include "dsdg/cli.hpp"

int main(int argc, char** argv) { return dsdg::cli::dsdg_main(argc, argv); }
