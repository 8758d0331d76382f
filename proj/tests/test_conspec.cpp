#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>

#include "conspec/conspec.hpp"
#include "test_util.hpp"

using namespace conspec;
using namespace conspec::core;

namespace {

TrajectoryPtr episode(std::uint64_t id, const std::vector<std::vector<double>>& rows, bool success = false) {
    auto t = std::make_shared<memory::Trajectory>();
    t->id = id;
    t->obs_dim = rows.front().size();
    for (const auto& r : rows) {
        t->observations.insert(t->observations.end(), r.begin(), r.end());
        t->actions.push_back(0);
        t->rewards.push_back(0.0);
    }
    t->success = success;
    return t;
}

void set_identity(nn::Linear& l) {
    const auto n = l.in_features();
    std::fill(l.weight->value.begin(), l.weight->value.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) l.weight->value[i * n + i] = 1.0;
    std::fill(l.bias->value.begin(), l.bias->value.end(), 0.0);
}

ConspecConfig tiny(std::size_t obs, std::size_t width, std::size_t H) {
    ConspecConfig c;
    c.obs_dim = obs;
    c.encoder_hidden = c.latent = c.projection_hidden = c.projection_out = width;
    c.prototypes = H;
    return c;
}

Var constant_scores(std::size_t H, std::size_t K, std::size_t T, std::vector<double> v) {
    return ad::parameter({H, K, T}, std::move(v));
}

}  // namespace

TEST(Scores, IdentityStubExample) {
    Rng rng(0);
    ConspecNet net(tiny(2, 2, 1), rng);
    for (auto* l : {&net.encoder_in, &net.encoder_out, &net.projection_in, &net.projection_out}) set_identity(*l);
    net.prototypes->value = {1.0, 0.0};
    const std::vector<TrajectoryPtr> eps = {episode(0, {{1, 0}, {0, 1}, {0.6, 0.8}})};
    const auto s = compute_scores(net, eps, 1.0);
    EXPECT_NEAR(s.at(0, 0, 0), 1.0, 1e-7);
    EXPECT_NEAR(s.at(0, 0, 1), 0.0, 1e-12);
    EXPECT_NEAR(s.at(0, 0, 2), 0.6, 1e-7);
    const auto sp = s.sparse_row(0, 0);
    const double z = std::exp(1.0) + 1.0 + std::exp(0.6);
    EXPECT_NEAR(sp[0], std::exp(1.0) / z, 1e-6);
    EXPECT_NEAR(sp[1], 1.0 / z, 1e-6);
    EXPECT_NEAR(sp[2], std::exp(0.6) / z, 1e-6);
    EXPECT_NEAR(sp[0], 0.4906, 1e-4);
    EXPECT_NEAR(std::accumulate(sp.begin(), sp.end(), 0.0), 1.0, 1e-12);
}

TEST(Scores, PrototypeEqualToProjectionScoresOne) {
    Rng rng(4);
    ConspecNet net(tiny(5, 4, 3), rng);
    const std::vector<double> o = {0.2, -0.4, 1.0, 0.3, 0.9};
    ad::Tape tape;
    const auto proj = net.project(tape, ad::constant({1, 5}, o));
    std::copy(proj->value.begin(), proj->value.end(), net.prototypes->value.begin() + 4);
    const std::vector<TrajectoryPtr> eps = {episode(0, {o, {0, 0, 0, 0, 1}})};
    EXPECT_NEAR(compute_scores(net, eps, 1.0).at(1, 0, 0), 1.0, 1e-6);
}

TEST(Scores, ManyToOneRecognition) {
    // Zero biases make the MLPs positively homogeneous, so O and 3 O project
    // onto the same direction and must score identically.
    Rng rng(8);
    ConspecNet net(tiny(6, 8, 4), rng);
    const std::vector<double> o = {0.5, -0.2, 0.9, 0.1, -0.7, 0.3};
    std::vector<double> o3 = o;
    for (auto& v : o3) v *= 3.0;
    const std::vector<TrajectoryPtr> eps = {episode(0, {o, o3})};
    const auto s = compute_scores(net, eps, 1.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s.at(i, 0, 0), s.at(i, 0, 1), 1e-7);
}

TEST(Scores, ShapesAndBounds) {
    Rng rng(2);
    ConspecNet net(tiny(4, 6, 3), rng);
    std::vector<TrajectoryPtr> eps;
    for (std::uint64_t k = 0; k < 5; ++k) {
        std::vector<std::vector<double>> rows;
        for (int t = 0; t < 7; ++t) rows.push_back(testutil::draw(rng, 4));
        eps.push_back(episode(k, rows));
    }
    const auto s = compute_scores(net, eps, 0.5);
    EXPECT_EQ(s.prototypes, 3u);
    EXPECT_EQ(s.episodes, 5u);
    EXPECT_EQ(s.steps, 7u);
    for (double v : s.raw) {
        EXPECT_LE(v, 1.0);
        EXPECT_GE(v, -1.0);
    }
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 5; ++k) {
            const auto r = s.sparse_row(i, k);
            EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-12);
        }
    std::vector<TrajectoryPtr> ragged = {eps[0], episode(9, {{0, 0, 0, 1}})};
    EXPECT_THROW(compute_scores(net, ragged, 1.0), std::invalid_argument);
}

TEST(Scores, DegeneratePrototypeIsRedrawn) {
    Rng rng(1);
    ConspecNet net(tiny(3, 3, 2), rng);
    std::fill(net.prototypes->value.begin(), net.prototypes->value.begin() + 3, 0.0);
    const std::vector<double> keep(net.prototypes->value.begin() + 3, net.prototypes->value.end());
    net.rerandomize_degenerate(rng);
    double n = 0.0;
    for (int c = 0; c < 3; ++c) n += std::abs(net.prototypes->value[static_cast<std::size_t>(c)]);
    EXPECT_GT(n, 0.0);
    EXPECT_EQ(std::vector<double>(net.prototypes->value.begin() + 3, net.prototypes->value.end()), keep);
}

TEST(Loss, PerfectSeparationIsZero) {
    ad::Tape tape;
    // H=2, K=2 (success, failure), T=2
    auto s = constant_scores(2, 2, 2, {0.2, 1.0, 0.0, -0.4, 1.0, 0.5, -0.3, 0.0});
    LossLayout lay{{0, 1}, {{0}, {0}}, {{1}, {1}}, {0}};
    EXPECT_NEAR(conspec_loss(tape, s, lay, 0.0, Diversity::orthogonality).total->item(), 0.0, 1e-15);
}

TEST(Loss, SingleProtoHandExample) {
    ad::Tape tape;
    auto s = constant_scores(1, 2, 3, {0.1, 0.8, 0.5, 0.3, -0.2, 0.0});
    LossLayout lay{{0}, {{0}}, {{1}}, {0}};
    EXPECT_NEAR(conspec_loss(tape, s, lay, 0.0, Diversity::orthogonality).total->item(), 0.5, 1e-15);
}

TEST(Loss, MeansOverActualBufferSizes) {
    ad::Tape tape;
    // successes with maxima 0.8 and 0.6, failures with maxima 0.2, 0.4, 0.0
    auto s = constant_scores(1, 5, 1, {0.8, 0.6, 0.2, -0.4, 0.0});
    LossLayout lay{{0}, {{0, 1}}, {{2, 3, 4}}, {0, 1}};
    const double expect = (0.2 + 0.4) / 2 + (0.2 + 0.4 + 0.0) / 3;
    EXPECT_NEAR(conspec_loss(tape, s, lay, 0.0, Diversity::orthogonality).total->item(), expect, 1e-15);
}

TEST(Loss, DuplicatedRowsGiveDiversityTwo) {
    ad::Tape tape;
    auto s = constant_scores(2, 1, 3, {0.3, 0.9, -0.1, 0.3, 0.9, -0.1});
    LossLayout lay{{0, 1}, {{0}, {0}}, {{}, {}}, {0}};
    const double alpha = 0.2;
    auto terms = conspec_loss(tape, s, lay, alpha, Diversity::orthogonality);
    // alpha / H * D with D = 2 for the single success episode
    EXPECT_NEAR(terms.diversity->item(), alpha / 2.0 * 2.0, 1e-7);
}

TEST(Loss, BoundsWithoutDiversity) {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t H = 1 + rng.below(4), K = 2 + rng.below(5), T = 1 + rng.below(5);
        ad::Tape tape;
        auto s = constant_scores(H, K, T, testutil::draw(rng, H * K * T));
        LossLayout lay;
        std::vector<std::size_t> S, F;
        for (std::size_t k = 0; k < K; ++k) (k % 2 ? F : S).push_back(k);
        for (std::size_t i = 0; i < H; ++i) {
            lay.active.push_back(i);
            lay.success.push_back(S);
            lay.failure.push_back(F);
        }
        lay.diversity_episodes = S;
        const double L = conspec_loss(tape, s, lay, 0.0, Diversity::entropy).total->item();
        EXPECT_GE(L, 0.0);
        EXPECT_LE(L, 3.0 * static_cast<double>(H));
    }
}

TEST(Loss, LayoutMismatchThrows) {
    ad::Tape tape;
    auto s = constant_scores(2, 1, 1, {0.1, 0.2});
    LossLayout lay{{0, 1}, {{0}}, {{}, {}}, {}};
    EXPECT_THROW(conspec_loss(tape, s, lay, 0.0, Diversity::orthogonality), std::invalid_argument);
}

TEST(Diversity, OrthogonalityExamples) {
    ad::Tape tape;
    EXPECT_NEAR(diversity_orthogonality(tape, ad::constant({2, 3}, {1, 0, 0, 0, 0, 1}))->item(), 0.0, 1e-15);
    EXPECT_NEAR(diversity_orthogonality(tape, ad::constant({3, 2}, {0.3, 0.7, 0.3, 0.7, 0.3, 0.7}))->item(), 6.0,
                1e-6);
    EXPECT_NEAR(diversity_orthogonality(tape, ad::constant({2, 2}, {0.5, 0.5, 1, 0}))->item(), std::sqrt(2.0), 1e-7);
    EXPECT_EQ(diversity_orthogonality(tape, ad::constant({1, 2}, {0.5, 0.5}))->item(), 0.0);
}

TEST(Diversity, EntropyExamples) {
    ad::Tape tape;
    EXPECT_NEAR(diversity_entropy(tape, ad::constant({1, 4}, {0.25, 0.25, 0.25, 0.25}))->item(), -std::log(4.0),
                1e-12);
    EXPECT_NEAR(diversity_entropy(tape, ad::constant({2, 3}, {0, 1, 0, 0, 1, 0}))->item(), 0.0, 1e-15);
    // two prototypes summing to [1.5, 0.5], normalised [0.75, 0.25]
    EXPECT_NEAR(diversity_entropy(tape, ad::constant({2, 2}, {0.75, 0.25, 0.75, 0.25}))->item(),
                0.75 * std::log(0.75) + 0.25 * std::log(0.25), 1e-12);
    EXPECT_NEAR(0.75 * std::log(0.75) + 0.25 * std::log(0.25), -0.562, 1e-3);
}

TEST(Reward, WindowedExamples) {
    const std::vector<double> below = {0.5, 0.59, 0.1};
    for (double r : windowed_reward(thresholded(below, 0.6), 0.2, 7)) EXPECT_EQ(r, 0.0);
    const std::vector<double> spike = {0, 0, 0.9, 0, 0, 0, 0};
    const auto r = windowed_reward(thresholded(spike, 0.6), 0.2, 7);
    const std::vector<double> expect = {0, 0, 0.18, 0, 0, 0, 0};
    for (std::size_t t = 0; t < 7; ++t) EXPECT_NEAR(r[t], expect[t], 1e-15);
    const std::vector<double> tie = {0.9, 0.9};
    const auto rt = windowed_reward(thresholded(tie, 0.6), 0.2, 7);
    EXPECT_NEAR(rt[0], 0.18, 1e-15);
    EXPECT_EQ(rt[1], 0.0);
}

TEST(Reward, WindowedPaysSeparatedPeaks) {
    // a window of 7 reaches 3 steps either side
    std::vector<double> s(14, 0.0);
    s[1] = 0.7;
    s[5] = 0.9;
    s[8] = 0.8;
    s[12] = 0.65;
    const auto r = windowed_reward(thresholded(s, 0.6), 1.0, 7);
    EXPECT_EQ(r[1], 0.7);
    EXPECT_EQ(r[5], 0.9);
    EXPECT_EQ(r[8], 0.0);
    EXPECT_EQ(r[12], 0.65);
}

TEST(Reward, PotentialExamples) {
    const std::vector<double> c = {0.7, 0.7, 0.7, 0.7};
    const auto r = potential_reward(c, 0.2, 1.0);
    EXPECT_NEAR(r[0], 0.2 * 0.7, 1e-15);
    for (std::size_t t = 1; t < 4; ++t) EXPECT_NEAR(r[t], 0.0, 1e-15);
    const std::vector<double> s = {0, 1, 1};
    const auto q = potential_reward(s, 0.2, 0.99);
    EXPECT_NEAR(q[0], 0.0, 1e-15);
    EXPECT_NEAR(q[1], 0.198, 1e-12);
    EXPECT_NEAR(q[2], -0.002, 1e-12);
}

TEST(Reward, PotentialTelescopes) {
    Rng rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t T = 1 + rng.below(80);
        std::vector<double> s(T);
        for (auto& v : s) v = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.6, 1.0);
        const double lambda = rng.uniform(0.0, 1.0), gamma = rng.uniform(0.5, 1.0);
        const auto r = potential_reward(s, lambda, gamma);
        double acc = 0.0, g = 1.0;
        for (std::size_t t = 0; t < T; ++t, g *= gamma) acc += g * r[t];
        EXPECT_NEAR(acc, lambda * g * s.back(), 1e-9);
    }
}

TEST(Reward, SumsOverGivenPrototypes) {
    const auto s = make_score_tensor(2, 1, 3, {0.9, 0, 0, 0, 0, 0.8}, 1.0);
    const std::vector<std::size_t> both = {0, 1}, first = {0};
    const auto r2 = intrinsic_reward_windowed(s, both, 0.5, 0.6, 7);
    EXPECT_NEAR(r2[0], 0.45, 1e-15);
    EXPECT_NEAR(r2[2], 0.4, 1e-15);
    const auto r1 = intrinsic_reward_windowed(s, first, 0.5, 0.6, 7);
    EXPECT_EQ(r1[2], 0.0);
    const auto p = intrinsic_reward_potential(s, both, 1.0, 1.0, 0.6);
    EXPECT_NEAR(p[0] + p[1] + p[2], 0.8, 1e-15);
}

namespace {

std::vector<Separation> seps(std::size_t H, double s, double f) {
    std::vector<Separation> out(H);
    for (auto& x : out) x = {s, f, true};
    return out;
}

std::size_t snapshot_hash(const FreezeState& st, std::size_t i) {
    std::size_t h = 1469598103934665603ull;
    for (const auto& t : st.success_snapshot[i]) h = (h ^ t->id) * 1099511628211ull;
    h = (h ^ 0xff) * 1099511628211ull;
    for (const auto& t : st.failure_snapshot[i]) h = (h ^ t->id) * 1099511628211ull;
    return h;
}

}  // namespace

TEST(Freeze, SustainedSeparationFreezesAtStep25) {
    FreezeState st(2, 0.6, 25);
    memory::FifoBuffer S(16), F(16);
    S.push(episode(1, {{0}}, true));
    F.push(episode(2, {{0}}));
    const std::vector<std::size_t> active = {0, 1};
    auto good = seps(2, 0.9, 0.1);
    good[1] = {0.9, 0.5, true};  // gap 0.4 is not enough
    for (int step = 1; step <= 24; ++step) {
        update_freeze(st, good, S, F, active);
        EXPECT_FALSE(st.frozen[0]);
    }
    update_freeze(st, good, S, F, active);
    EXPECT_TRUE(st.frozen[0]);
    EXPECT_FALSE(st.frozen[1]);
    EXPECT_EQ(st.counter[1], 0);
    EXPECT_EQ(st.success_snapshot[0].size(), 1u);
    EXPECT_EQ(st.failure_snapshot[0].size(), 1u);
}

TEST(Freeze, OneViolationResetsCounter) {
    FreezeState st(1, 0.6, 25);
    memory::FifoBuffer S(16), F(16);
    const std::vector<std::size_t> active = {0};
    for (int step = 0; step < 24; ++step) update_freeze(st, seps(1, 0.9, 0.1), S, F, active);
    EXPECT_EQ(st.counter[0], 24);
    update_freeze(st, seps(1, 0.9, 0.5), S, F, active);
    EXPECT_EQ(st.counter[0], 0);
    EXPECT_FALSE(st.frozen[0]);
    // a high gap with a low success mean also fails
    update_freeze(st, seps(1, 0.55, -0.4), S, F, active);
    EXPECT_EQ(st.counter[0], 0);
}

TEST(Freeze, FrozenStateAndSnapshotNeverChange) {
    FreezeState st(1, 0.6, 2);
    memory::FifoBuffer S(16), F(16);
    S.push(episode(10, {{0}}, true));
    F.push(episode(20, {{0}}));
    const std::vector<std::size_t> active = {0};
    update_freeze(st, seps(1, 0.9, 0.1), S, F, active);
    update_freeze(st, seps(1, 0.9, 0.1), S, F, active);
    ASSERT_TRUE(st.frozen[0]);
    const auto h = snapshot_hash(st, 0);
    const int counter = st.counter[0];
    for (std::uint64_t i = 0; i < 40; ++i) {
        S.push(episode(100 + i, {{0}}, true));
        F.push(episode(200 + i, {{0}}));
        update_freeze(st, seps(1, i % 2 ? 0.9 : 0.0, 0.1), S, F, active);
        EXPECT_EQ(snapshot_hash(st, 0), h);
        EXPECT_EQ(st.counter[0], counter);
        EXPECT_TRUE(st.frozen[0]);
    }
}

TEST(Freeze, InvalidSeparationNeverCounts) {
    FreezeState st(1, 0.6, 1);
    memory::FifoBuffer S(16), F(16);
    const std::vector<std::size_t> active = {0};
    update_freeze(st, std::vector<Separation>{{0.9, 0.1, false}}, S, F, active);
    EXPECT_FALSE(st.frozen[0]);
}

TEST(Recruit, Examples) {
    RecruitState r{3, 8};
    auto all = seps(8, 0.9, 0.1);
    EXPECT_TRUE(maybe_recruit(r, all, 0.6));
    EXPECT_EQ(r.active, 4u);
    RecruitState r2{3, 8};
    auto one_bad = seps(8, 0.9, 0.1);
    one_bad[2] = {0.7, 0.5, true};
    EXPECT_FALSE(maybe_recruit(r2, one_bad, 0.6));
    EXPECT_EQ(r2.active, 3u);
    RecruitState full{8, 8};
    EXPECT_FALSE(maybe_recruit(full, all, 0.6));
    EXPECT_EQ(full.active, 8u);
}

// Full-parameter gradient of the loss on random 2-prototype, 2-episode,
// 3-step instances, with and without a frozen prototype, both D modes.
class LossGradient : public ::testing::TestWithParam<int> {};

TEST_P(LossGradient, MatchesFiniteDifferences) {
    Rng rng(500 + static_cast<std::uint64_t>(GetParam()));
    auto cfg = tiny(4, 5, 2);
    ConspecNet net(cfg, rng);
    for (const auto& p : net.parameters())
        if (p->rank() == 1)
            for (auto& b : p->value) b = rng.uniform(0.05, 0.3);
    std::vector<TrajectoryPtr> eps;
    for (std::uint64_t k = 0; k < 3; ++k) {
        std::vector<std::vector<double>> rows;
        for (int t = 0; t < 3; ++t) rows.push_back(testutil::draw(rng, 4));
        eps.push_back(episode(k, rows));
    }
    const bool frozen = GetParam() % 2 == 1;
    LossLayout lay;
    lay.active = {0, 1};
    lay.success = {{0}, {0}};
    lay.failure = {{1}, {1}};
    if (frozen) {
        lay.success[0] = {2};
        lay.failure[0] = {1};
    }
    lay.diversity_episodes = {0};
    const auto params = net.parameters();
    for (auto mode : {Diversity::orthogonality, Diversity::entropy}) {
        const auto err = testutil::max_rel_error(params, [&](ad::Tape& t) {
            return conspec_loss(t, score_graph(t, net, eps), lay, 0.5, mode, 0.7).total;
        });
        EXPECT_LT(err, 1e-4) << (mode == Diversity::orthogonality ? "orthogonality" : "entropy");
    }
}

INSTANTIATE_TEST_SUITE_P(Random, LossGradient, ::testing::Range(0, 20));

namespace {

memory::FifoBuffer buffer_of(std::vector<TrajectoryPtr> v) {
    memory::FifoBuffer b(16);
    for (auto& t : v) b.push(std::move(t));
    return b;
}

std::vector<TrajectoryPtr> random_episodes(Rng& rng, std::size_t n, std::size_t T, std::size_t D, bool success,
                                           std::uint64_t base) {
    std::vector<TrajectoryPtr> out;
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<std::vector<double>> rows;
        for (std::size_t t = 0; t < T; ++t) rows.push_back(testutil::draw(rng, D));
        out.push_back(episode(base + k, rows, success));
    }
    return out;
}

}  // namespace

TEST(Module, EmptySuccessBufferSkipsTraining) {
    Rng rng(3);
    ConspecModule m(tiny(4, 6, 3), rng, {2e-3, 0.9, 0.999, 1e-5});
    const auto before = m.net().prototypes->value;
    memory::FifoBuffer S(16);
    auto F = buffer_of(random_episodes(rng, 3, 4, 4, false, 0));
    const auto rep = m.train_step(S, F, 1.0);
    EXPECT_FALSE(rep.trained);
    EXPECT_EQ(rep.loss, 0.0);
    EXPECT_EQ(m.net().prototypes->value, before);
    EXPECT_EQ(m.optimizer().steps(), 0u);
}

TEST(Module, ZeroBetaSkipsTraining) {
    Rng rng(3);
    ConspecModule m(tiny(4, 6, 3), rng, {});
    auto S = buffer_of(random_episodes(rng, 2, 4, 4, true, 0));
    auto F = buffer_of(random_episodes(rng, 3, 4, 4, false, 10));
    EXPECT_FALSE(m.train_step(S, F, 0.0).trained);
    EXPECT_EQ(m.optimizer().steps(), 0u);
}

TEST(Module, NonFiniteLossThrows) {
    Rng rng(3);
    ConspecModule m(tiny(4, 6, 3), rng, {});
    m.net().prototypes->value[0] = std::nan("");
    auto S = buffer_of(random_episodes(rng, 2, 4, 4, true, 0));
    auto F = buffer_of(random_episodes(rng, 3, 4, 4, false, 10));
    EXPECT_THROW(m.train_step(S, F, 1.0), std::runtime_error);
}

TEST(Module, StepDecreasesLossOnFixedBuffers) {
    Rng rng(6);
    ConspecModule m(tiny(4, 8, 3), rng, {2e-3, 0.9, 0.999, 1e-5});
    auto S = buffer_of(random_episodes(rng, 2, 5, 4, true, 0));
    auto F = buffer_of(random_episodes(rng, 14, 5, 4, false, 10));
    double first = m.train_step(S, F, 1.0).loss, last = first;
    for (int i = 0; i < 50; ++i) last = m.train_step(S, F, 1.0).loss;
    EXPECT_LT(last, first);
}

TEST(Module, RecruitmentStartsWithThree) {
    Rng rng(6);
    auto cfg = tiny(4, 6, 8);
    cfg.recruit = true;
    ConspecModule m(cfg, rng, {});
    EXPECT_EQ(m.active_prototypes().size(), 3u);
    cfg.recruit = false;
    ConspecModule all(cfg, rng, {});
    EXPECT_EQ(all.active_prototypes().size(), 8u);
}

TEST(Module, SeparatedOnlyRewardIsZeroBeforeAnySeparation) {
    Rng rng(6);
    auto cfg = tiny(4, 6, 3);
    cfg.reward_separated_only = true;
    cfg.threshold = -2.0;  // every raw score would pass the threshold
    ConspecModule m(cfg, rng, {});
    auto eps = random_episodes(rng, 2, 5, 4, false, 0);
    for (double r : m.intrinsic_rewards(eps, RewardScheme::windowed, 0.2, 0.99)) EXPECT_EQ(r, 0.0);
    cfg.reward_separated_only = false;
    ConspecModule open(cfg, rng, {});
    double total = 0.0;
    for (double r : open.intrinsic_rewards(eps, RewardScheme::windowed, 0.2, 0.99)) total += r;
    EXPECT_GT(total, 0.0);
}

TEST(Module, FrozenPrototypeUsesSnapshot) {
    Rng rng(9);
    auto cfg = tiny(4, 6, 2);
    cfg.freeze_steps = 1;
    cfg.threshold = -5.0;  // criterion always met: freeze on the first step
    ConspecModule m(cfg, rng, {});
    auto S = buffer_of(random_episodes(rng, 2, 3, 4, true, 0));
    auto F = buffer_of(random_episodes(rng, 2, 3, 4, false, 10));
    m.train_step(S, F, 1.0);
    ASSERT_EQ(m.freeze_state().frozen_count(), 2u);
    for (const auto& t : random_episodes(rng, 3, 3, 4, true, 20)) S.push(t);
    ad::Tape tape;
    const auto g = m.build_loss(tape, S, F);
    for (std::size_t j = 0; j < 2; ++j) {
        ASSERT_EQ(g.layout.success[j].size(), 2u);
        for (auto c : g.layout.success[j]) EXPECT_LT(g.columns[c]->id, 2u);
    }
    EXPECT_EQ(g.live_success.size(), 5u);
}
