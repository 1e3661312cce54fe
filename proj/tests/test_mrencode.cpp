#include <doctest.h>
TEST_SUITE("mrencode") {}
