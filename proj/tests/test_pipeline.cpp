#include <doctest.h>
TEST_SUITE("pipeline") {}
