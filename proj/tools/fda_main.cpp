#include "fda/cli.hpp"

int main(int argc, char** argv) { return fda::cli::dispatch(argc, argv); }
