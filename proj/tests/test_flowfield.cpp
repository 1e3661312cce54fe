#include <doctest.h>
TEST_SUITE("flowfield") {}
