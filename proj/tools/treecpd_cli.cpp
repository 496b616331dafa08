#include "treecpd/cli.hpp"

int main(int argc, char** argv) { return treecpd::cli::run(argc, argv); }
