#include "crosstill/cli.hpp"

int main(int argc, char** argv) { return crosstill::cli::run(argc, argv); }
