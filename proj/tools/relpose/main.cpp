#include "cli.hpp"

int main(int argc, char** argv) { return relpose::cli::run(argc, argv); }
