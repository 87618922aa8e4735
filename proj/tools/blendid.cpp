#include "blendid/harness.hpp"

int main(int argc, char** argv) { return blendid::cli(argc, argv); }
