#include "csrm/cli.hpp"

int main(int argc, char** argv) { return csrm::cli::run(argc, argv); }
