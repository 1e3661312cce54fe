#include <doctest.h>
TEST_SUITE("metrics") {}
