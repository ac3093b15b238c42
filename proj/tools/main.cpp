#include "dietfield/cli.hpp"

int main(int argc, char** argv) { return dietfield::cli::run(argc, argv); }
