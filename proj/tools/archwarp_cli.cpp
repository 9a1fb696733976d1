#include "archwarp/cli.hpp"

int main(int argc, char** argv) { return archwarp::cli_main(argc, argv); }
