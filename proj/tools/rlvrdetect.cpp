#include "rlvrdetect/cli.hpp"

int main(int argc, char** argv) { return rlvrdetect::cli::run(argc, argv); }
