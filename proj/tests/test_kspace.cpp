#include <doctest.h>
TEST_SUITE("kspace") {}
