#include <gtest/gtest.h>

#include <numeric>

#include "conspec/env.hpp"
#include "scripted_agent.hpp"

using namespace conspec;
using namespace conspec::env;

namespace {

int count_channel(const Observation& o, const GridTask& t, int ch) {
    const auto n = static_cast<std::ptrdiff_t>(t.rows * t.cols);
    return static_cast<int>(std::count(o.begin() + ch * n, o.begin() + (ch + 1) * n, 1.0));
}

double run_script(KeyDoorEnv& env, std::uint64_t seed, const std::vector<int>& skip_keys = {}) {
    return scripted::run(env, seed, skip_keys);
}

}  // namespace

TEST(Reset, SameSeedSameObservation) {
    GridTask t;
    t.keys = 2;
    KeyDoorEnv a(t), b(t);
    EXPECT_EQ(a.reset(7), b.reset(7));
    EXPECT_EQ(a.reset(7), a.reset(7));
}

TEST(Reset, OneKeyTaskShowsOneKey) {
    GridTask t;
    KeyDoorEnv env(t);
    const auto o = env.reset(3);
    EXPECT_EQ(o.size(), 75u);
    EXPECT_EQ(count_channel(o, t, 0), 1);
    EXPECT_EQ(count_channel(o, t, 1), 1);
    EXPECT_EQ(count_channel(o, t, 2), 1);
}

TEST(Reset, ConjunctiveFourKeysAcrossStages) {
    GridTask t;
    t.keys = 4;
    t.conjunctive = true;
    t.key_rooms = {0, 0, 1, 1};
    KeyDoorEnv env(t);
    const auto& lay = env.layout();
    // the layout places four distinct keys, two per room
    for (int r = 0; r < 2; ++r)
        EXPECT_NE(lay.key_cells[static_cast<std::size_t>(2 * r)], lay.key_cells[static_cast<std::size_t>(2 * r + 1)]);
    int seen = count_channel(env.reset(1), t, 1);
    EXPECT_EQ(seen, 2);
    while (env.stage().kind != StageKind::key_room || env.stage().room != 1) env.step(Action::stay);
    seen += count_channel(env.observe(), t, 1);
    EXPECT_EQ(seen, 4);
}

TEST(Reset, StartsAwayFromKeys) {
    GridTask t;
    t.keys = 2;
    KeyDoorEnv env(t);
    for (std::uint64_t s = 0; s < 200; ++s) {
        env.reset(s);
        const Cell k = env.layout().key_cells[0];
        EXPECT_GE(std::abs(env.agent().row - k.row) + std::abs(env.agent().col - k.col), t.key_start_distance);
    }
}

TEST(Step, ObservationInvariants) {
    GridTask t;
    t.keys = 2;
    KeyDoorEnv env(t);
    Rng rng(5);
    for (int ep = 0; ep < 20; ++ep) {
        auto o = env.reset(rng.next_u64());
        int steps = 0;
        while (!env.done()) {
            for (double v : o) EXPECT_TRUE(v == 0.0 || v == 1.0);
            EXPECT_EQ(count_channel(o, t, 0), 1);
            o = env.step(static_cast<Action>(rng.below(5))).observation;
            ++steps;
        }
        EXPECT_EQ(steps, t.episode_length());
    }
}

TEST(Step, AfterDoneThrows) {
    GridTask t;
    KeyDoorEnv env(t);
    env.reset(0);
    while (!env.done()) env.step(Action::stay);
    EXPECT_THROW(env.step(Action::stay), std::logic_error);
}

TEST(Step, NeverExitingGivesZeroReward) {
    GridTask t;
    t.keys = 2;
    KeyDoorEnv env(t);
    Rng rng(9);
    for (int ep = 0; ep < 50; ++ep) {
        env.reset(rng.next_u64());
        double total = 0.0;
        while (!env.done()) {
            auto r = env.step(static_cast<Action>(rng.below(5)));
            if (r.event.kind != Event::Kind::final_exit) {
                EXPECT_EQ(r.reward, 0.0);
            }
            total += r.reward;
        }
        EXPECT_EQ(total > 0.0, env.succeeded());
    }
}

TEST(Script, OptimalOneKeyEarnsTen) {
    GridTask t;
    KeyDoorEnv env(t);
    for (std::uint64_t s = 0; s < 20; ++s) {
        EXPECT_EQ(run_script(env, s), 10.0) << "seed " << s;
        EXPECT_TRUE(env.succeeded());
    }
}

TEST(Script, OptimalTwoKeyEarnsTen) {
    GridTask t;
    t.keys = 2;
    KeyDoorEnv env(t);
    for (std::uint64_t s = 0; s < 20; ++s) EXPECT_EQ(run_script(env, s), 10.0) << "seed " << s;
}

TEST(Script, SkippingKeyOneBlocksEverything) {
    GridTask t;
    t.keys = 2;
    KeyDoorEnv env(t);
    for (std::uint64_t s = 0; s < 20; ++s) {
        EXPECT_EQ(run_script(env, s, {0}), 0.0);
        EXPECT_FALSE(env.passed_door(0));
        EXPECT_FALSE(env.passed_door(1));
        EXPECT_TRUE(env.holds_key(1));
    }
}

TEST(Script, ConjunctiveAnyOrder) {
    GridTask t;
    t.keys = 3;
    t.conjunctive = true;
    KeyDoorEnv env(t);
    for (std::uint64_t s = 0; s < 10; ++s) EXPECT_EQ(run_script(env, s), 10.0);
}

// Every action sequence on a tiny sequential task: reward only ever follows
// key 1 then key 2 pickups.
TEST(Exhaustive, SequentialContingency) {
    GridTask t;
    t.rows = t.cols = 3;
    t.keys = 2;
    t.key_steps = 2;
    t.wait_steps = 0;
    t.final_steps = 2;
    KeyDoorEnv env(t);
    const int T = t.episode_length();
    ASSERT_EQ(T, 6);
    int total = 1, rewarded = 0;
    for (int i = 0; i < T; ++i) total *= kNumActions;
    for (std::uint64_t seed : {0ull, 1ull}) {
        for (int code = 0; code < total; ++code) {
            env.reset(seed);
            int c = code, k1 = -1, k2 = -1;
            double reward = 0.0;
            for (int step = 0; step < T; ++step) {
                const auto r = env.step(static_cast<Action>(c % kNumActions));
                c /= kNumActions;
                if (r.event.kind == Event::Kind::key_pickup) {
                    (r.event.index == 0 ? k1 : k2) = step;
                }
                reward += r.reward;
            }
            if (reward > 0.0) {
                ++rewarded;
                ASSERT_GE(k1, 0);
                ASSERT_GT(k2, k1);
            }
        }
    }
    EXPECT_GT(rewarded, 0);
}

// Two keys in one room of a conjunctive task: rewarded sequences exist for
// both pickup orders.
TEST(Exhaustive, ConjunctiveBothOrders) {
    GridTask t;
    t.rows = t.cols = 4;
    t.keys = 2;
    t.conjunctive = true;
    t.key_rooms = {0, 0};
    t.key_start_distance = 0;
    t.key_steps = 4;
    t.wait_steps = 0;
    t.final_steps = 2;
    KeyDoorEnv env(t);
    const int T = t.episode_length();
    int total = 1;
    for (int i = 0; i < T; ++i) total *= kNumActions;
    int forward = 0, backward = 0;
    for (std::uint64_t seed = 0; seed < 4; ++seed)
        for (int code = 0; code < total; ++code) {
            env.reset(seed);
            int c = code, k1 = -1, k2 = -1;
            double reward = 0.0;
            for (int step = 0; step < T; ++step) {
                const auto r = env.step(static_cast<Action>(c % kNumActions));
                c /= kNumActions;
                if (r.event.kind == Event::Kind::key_pickup) {
                    (r.event.index == 0 ? k1 : k2) = step;
                }
                reward += r.reward;
            }
            if (reward > 0.0) {
                ASSERT_GE(k1, 0);
                ASSERT_GE(k2, 0);
                (k1 < k2 ? forward : backward) += 1;
            }
        }
    EXPECT_GT(forward, 0);
    EXPECT_GT(backward, 0);
}

TEST(Task, ValidationErrors) {
    GridTask t;
    t.keys = 0;
    EXPECT_THROW(KeyDoorEnv{t}, std::invalid_argument);
    t = {};
    t.key_rooms = {0};
    EXPECT_THROW(KeyDoorEnv{t}, std::invalid_argument);
    t = {};
    t.rows = t.cols = 3;
    t.keys = 2;
    t.conjunctive = true;
    t.key_rooms = {0, 0};  // one interior cell cannot hold two keys
    EXPECT_THROW(KeyDoorEnv{t}, std::invalid_argument);
    t = {};
    t.key_start_distance = -1;
    EXPECT_THROW(KeyDoorEnv{t}, std::invalid_argument);
}

TEST(Task, EpisodeLengthIsSumOfStages) {
    GridTask t;
    t.keys = 3;
    const auto st = stages_of(t);
    int sum = 0;
    for (const auto& s : st) sum += s.length;
    EXPECT_EQ(sum, t.episode_length());
    EXPECT_EQ(sum, 3 * (10 + 20) + 10);
}
