#include "klfuse/fitting.hpp"

#include <gtest/gtest.h>

int main(int argc, char** argv) {
    ::testing::InitGoogleTest(&argc, argv);
    klfuse::set_assert_monotone(true);
    return RUN_ALL_TESTS();
}
