#include <doctest.h>
TEST_SUITE("net") {}
