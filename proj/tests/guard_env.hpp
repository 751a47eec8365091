#pragma once

// Included once per test binary: fails the run if any test attempted a
// non-loopback connection while the guard was active.

#include <gtest/gtest.h>

#include "net_guard.hpp"

class NetGuardEnvironment : public ::testing::Environment {
public:
    void TearDown() override {
        EXPECT_EQ(net_guard::denied_attempts(), 0u) << "a test tried to reach the network";
    }
};

inline ::testing::Environment* const kNetGuardEnvironment =
    ::testing::AddGlobalTestEnvironment(new NetGuardEnvironment);
