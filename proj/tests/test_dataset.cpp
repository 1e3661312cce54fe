#include <doctest.h>
TEST_SUITE("dataset") {}
