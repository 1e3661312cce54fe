#include <doctest.h>
TEST_SUITE("infer") {}
