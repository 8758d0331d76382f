#include <gtest/gtest.h>

#include "conspec/mdp.hpp"

using namespace conspec;
using namespace conspec::env;

TEST(SolveMdp, ZeroRewardsGiveZeroValuesAndLowestAction) {
    const auto m = ChainMDP::deterministic(4, 0.9);
    const auto sol = solve_mdp(m);
    for (double v : sol.values) EXPECT_EQ(v, 0.0);
    for (int a : sol.policy) EXPECT_EQ(a, 0);
}

TEST(SolveMdp, ThreeStateChainRewardAtRightEnd) {
    auto m = ChainMDP::deterministic(3, 0.9);
    // one unit per step spent in the right-most state
    for (int a = 0; a < ChainMDP::kActions; ++a)
        for (int s2 = 0; s2 < 3; ++s2) m.reward[m.index(2, a, s2)] = 1.0;
    const auto sol = solve_mdp(m);
    // V(2) = 1 / (1 - 0.9), and each step to the left discounts once more
    const double v2 = 1.0 / (1.0 - 0.9);
    EXPECT_NEAR(sol.values[2], v2, 1e-8);
    EXPECT_NEAR(sol.values[1], 0.9 * v2, 1e-8);
    EXPECT_NEAR(sol.values[0], 0.81 * v2, 1e-8);
    EXPECT_EQ(sol.policy[0], 1);
    EXPECT_EQ(sol.policy[1], 1);
}

TEST(SolveMdp, ShapingKeepsGreedyPolicy) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(9));
        const auto m = ChainMDP::random(n, 0.9, rng);
        std::vector<double> phi(static_cast<std::size_t>(n));
        for (auto& p : phi) p = rng.uniform(-5.0, 5.0);
        const auto plain = solve_mdp(m);
        const auto shaped = solve_mdp(m, potential_shaped(m, phi));
        EXPECT_EQ(plain.policy, shaped.policy) << "trial " << trial;
        // shaped values are offset by exactly -phi
        for (int s = 0; s < n; ++s)
            EXPECT_NEAR(shaped.values[static_cast<std::size_t>(s)],
                        plain.values[static_cast<std::size_t>(s)] - phi[static_cast<std::size_t>(s)], 1e-7);
    }
}

TEST(SolveMdp, RejectsBadTables) {
    auto m = ChainMDP::deterministic(3, 0.9);
    m.transition[m.index(0, 0, 1)] += 0.5;
    EXPECT_THROW(solve_mdp(m), std::invalid_argument);

    auto neg = ChainMDP::deterministic(3, 0.9);
    neg.transition[neg.index(1, 2, 1)] = 1.5;
    neg.transition[neg.index(1, 2, 0)] = -0.5;
    EXPECT_THROW(solve_mdp(neg), std::invalid_argument);

    auto undiscounted = ChainMDP::deterministic(3, 1.0);
    EXPECT_THROW(solve_mdp(undiscounted), std::invalid_argument);

    auto big = ChainMDP::deterministic(3, 0.9);
    big.states = 21;
    EXPECT_THROW(big.validate(), std::invalid_argument);
}

TEST(SolveMdp, RandomChainsAreStochastic) {
    Rng rng(4);
    for (int i = 0; i < 20; ++i) EXPECT_NO_THROW(ChainMDP::random(1 + static_cast<int>(rng.below(20)), 0.95, rng).validate());
}
