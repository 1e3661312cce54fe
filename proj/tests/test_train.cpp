#include <doctest.h>
TEST_SUITE("train") {}
