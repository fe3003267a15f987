#include "layoutforge/cli.hpp"

int main(int argc, char** argv) { return layoutforge::cli::run(argc, argv); }
