#include "sechyp/cli.hpp"

int main(int argc, char** argv) { return sechyp::cli_main(argc, argv); }
