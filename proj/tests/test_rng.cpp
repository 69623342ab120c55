#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "obswave/ensemble.hpp"
#include "obswave/rng.hpp"

using namespace obswave;

// Known-answer vectors of the Philox4x32-10 reference implementation.
TEST(Philox, KnownAnswers) {
    auto a = philox4x32_10({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(a[0], 0x6627e8d5u);
    EXPECT_EQ(a[1], 0xe169c58du);
    EXPECT_EQ(a[2], 0xbc57ac4cu);
    EXPECT_EQ(a[3], 0x9b00dbd8u);
    auto b = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(b[0], 0x408f276du);
    EXPECT_EQ(b[1], 0x41c83b0eu);
    EXPECT_EQ(b[2], 0xa20bc7c6u);
    EXPECT_EQ(b[3], 0x6d5451fdu);
    auto c = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(c[0], 0xd16cfe09u);
    EXPECT_EQ(c[1], 0x94fdccebu);
    EXPECT_EQ(c[2], 0x5001e420u);
    EXPECT_EQ(c[3], 0x24126ea1u);
}

TEST(Brownian, Deterministic) {
    const auto a = sample_brownian(1, 0, 1000, 0.01);
    const auto b = sample_brownian(1, 0, 1000, 0.01);
    EXPECT_EQ(a.increments, b.increments);
    const auto c = sample_brownian(1, 1, 1000, 0.01);
    EXPECT_NE(a.increments, c.increments);
}

TEST(Brownian, IncrementMomentsSinglePath) {
    const int nt = 1000;
    const double dt = 0.01;
    const auto b = sample_brownian(1, 0, nt, dt);
    const auto s = sample_stats(b.increments);
    EXPECT_LE(std::fabs(s.mean), 4 * std::sqrt(dt) / std::sqrt(double(nt)));
    EXPECT_NEAR(s.variance, dt, 0.15 * dt);
}

TEST(Brownian, TerminalVariance) {
    const int paths = 10000, nt = 100;
    const double T = 1.0;
    const auto bt = parallel_map<double>(paths, [&](std::size_t i) {
        return sample_brownian(1, i, nt, T / nt).value_at(nt);
    });
    std::vector<double> sq;
    for (double v : bt) sq.push_back(v * v);
    EXPECT_NEAR(compensated_sum(sq) / paths, T, 0.05 * T);
}

TEST(Brownian, RejectsBadArguments) {
    EXPECT_THROW(sample_brownian(1, 0, 0, 0.1), Error);
    EXPECT_THROW(sample_brownian(1, 0, 10, 0.0), Error);
}

TEST(Ensemble, CompensatedSumIsExactOnCancellation) {
    EXPECT_EQ(compensated_sum({1.0, 1e100, 1.0, -1e100}), 2.0);
}
