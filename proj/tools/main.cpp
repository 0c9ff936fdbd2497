#include "binsed_cli.hpp"

int main(int argc, char** argv) { return binsed::cli::run(argc, argv); }
