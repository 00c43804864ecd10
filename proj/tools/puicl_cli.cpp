#include "commands.hpp"

int main(int argc, char** argv) { return puicl::cli::run(argc, argv); }
