#include "grouptron/cli.hpp"

int main(int argc, char** argv) { return grouptron::cli_run(argc, argv); }
