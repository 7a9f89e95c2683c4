#include "ttcloc/commands.hpp"

int main(int argc, char** argv) { return ttcloc::run_cli(argc, argv); }
