#include "cli.hpp"

int main(int argc, char** argv) { return cfpp::cli::main(argc, argv); }
