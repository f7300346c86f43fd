#include <emoforge/cli.hpp>

int main(int argc, char** argv) { return emoforge::run_cli(argc, argv); }
