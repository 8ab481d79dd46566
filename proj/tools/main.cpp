#include "lacune/cli.hpp"

int main(int argc, char** argv) { return lacune::cli::dispatch(argc, argv); }
