#include "mahrl/harness.hpp"

int main(int argc, char** argv) { return mahrl::cli(argc, argv); }
