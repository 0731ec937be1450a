#include "adld/cli/commands.hpp"

int main(int argc, char** argv) { return adld::cli::run(argc, argv); }
