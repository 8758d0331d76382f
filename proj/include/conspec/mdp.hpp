#pragma once

// Small tabular chain MDPs and an exact value-iteration solver. Used as an
// oracle for potential-based reward shaping.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "conspec/rng.hpp"

namespace conspec::env {

struct ChainMDP {
    static constexpr int kActions = 3;  // left, right, stay

    int states = 0;
    double gamma = 0.9;
    std::vector<double> transition;  // [s][a][s']
    std::vector<double> reward;      // [s][a][s']

    std::size_t index(int s, int a, int s2) const {
        return (static_cast<std::size_t>(s) * kActions + static_cast<std::size_t>(a)) *
                   static_cast<std::size_t>(states) +
               static_cast<std::size_t>(s2);
    }
    double p(int s, int a, int s2) const { return transition[index(s, a, s2)]; }
    double r(int s, int a, int s2) const { return reward[index(s, a, s2)]; }

    void validate() const {
        if (states < 1 || states > 20) throw std::invalid_argument("ChainMDP: states must be in [1, 20]");
        const auto n = static_cast<std::size_t>(states) * kActions * static_cast<std::size_t>(states);
        if (transition.size() != n || reward.size() != n)
            throw std::invalid_argument("ChainMDP: table size mismatch");
        for (int s = 0; s < states; ++s)
            for (int a = 0; a < kActions; ++a) {
                double row = 0.0;
                for (int s2 = 0; s2 < states; ++s2) {
                    if (p(s, a, s2) < 0.0)
                        throw std::invalid_argument("ChainMDP: negative transition probability");
                    row += p(s, a, s2);
                }
                if (std::abs(row - 1.0) > 1e-12) {
                    throw std::invalid_argument("ChainMDP: transition row (" + std::to_string(s) + "," +
                                                std::to_string(a) + ") sums to " + std::to_string(row));
                }
            }
    }

    // Deterministic chain: left/right move one state (clamped), stay stays.
    static ChainMDP deterministic(int n, double gamma) {
        ChainMDP m;
        m.states = n;
        m.gamma = gamma;
        const auto size = static_cast<std::size_t>(n) * kActions * static_cast<std::size_t>(n);
        m.transition.assign(size, 0.0);
        m.reward.assign(size, 0.0);
        for (int s = 0; s < n; ++s) {
            m.transition[m.index(s, 0, std::max(0, s - 1))] = 1.0;
            m.transition[m.index(s, 1, std::min(n - 1, s + 1))] = 1.0;
            m.transition[m.index(s, 2, s)] = 1.0;
        }
        return m;
    }

    // Random slippery chain: the intended move succeeds with probability in
    // [0.5, 1), the remainder spreads over the other two neighbours. Rewards
    // are uniform in [-1, 1] per (s, a, s').
    static ChainMDP random(int n, double gamma, Rng& rng) {
        ChainMDP m;
        m.states = n;
        m.gamma = gamma;
        const auto size = static_cast<std::size_t>(n) * kActions * static_cast<std::size_t>(n);
        m.transition.assign(size, 0.0);
        m.reward.assign(size, 0.0);
        for (int s = 0; s < n; ++s) {
            const int dest[3] = {std::max(0, s - 1), std::min(n - 1, s + 1), s};
            for (int a = 0; a < kActions; ++a) {
                const double intended = rng.uniform(0.5, 1.0);
                const double split = rng.uniform();
                const double rest = 1.0 - intended;
                int other = 0;
                for (int b = 0; b < kActions; ++b) {
                    const double w = b == a ? intended : (other++ == 0 ? rest * split : rest * (1.0 - split));
                    m.transition[m.index(s, a, dest[b])] += w;
                }
                // Renormalise away rounding so rows sum to 1 exactly enough.
                double row = 0.0;
                for (int s2 = 0; s2 < n; ++s2) row += m.p(s, a, s2);
                for (int s2 = 0; s2 < n; ++s2) m.transition[m.index(s, a, s2)] /= row;
                for (int s2 = 0; s2 < n; ++s2) m.reward[m.index(s, a, s2)] = rng.uniform(-1.0, 1.0);
            }
        }
        return m;
    }
};

using RewardFn = std::function<double(int, int, int)>;

struct MdpSolution {
    std::vector<double> values;
    std::vector<int> policy;
    std::vector<double> q;  // [s][a]
    int iterations = 0;
};

// Value iteration until the max-norm residual drops below `tolerance`. The
// greedy policy takes the lowest action index among actions within
// `tie_tolerance` of the best Q-value.
inline MdpSolution solve_mdp(const ChainMDP& mdp, const RewardFn& reward_fn, double tolerance = 1e-10,
                             double tie_tolerance = 1e-9, int max_iterations = 1000000) {
    mdp.validate();
    if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0)) throw std::invalid_argument("solve_mdp: gamma must be in [0, 1)");
    const int n = mdp.states, A = ChainMDP::kActions;
    MdpSolution sol;
    sol.values.assign(static_cast<std::size_t>(n), 0.0);
    sol.q.assign(static_cast<std::size_t>(n * A), 0.0);
    auto backup = [&](const std::vector<double>& v) {
        for (int s = 0; s < n; ++s)
            for (int a = 0; a < A; ++a) {
                double acc = 0.0;
                for (int s2 = 0; s2 < n; ++s2) {
                    const double pr = mdp.p(s, a, s2);
                    if (pr != 0.0) acc += pr * (reward_fn(s, a, s2) + mdp.gamma * v[static_cast<std::size_t>(s2)]);
                }
                sol.q[static_cast<std::size_t>(s * A + a)] = acc;
            }
    };
    std::vector<double> next(static_cast<std::size_t>(n));
    for (sol.iterations = 0; sol.iterations < max_iterations; ++sol.iterations) {
        backup(sol.values);
        double residual = 0.0;
        for (int s = 0; s < n; ++s) {
            const auto* row = &sol.q[static_cast<std::size_t>(s * A)];
            next[static_cast<std::size_t>(s)] = *std::max_element(row, row + A);
            residual = std::max(residual, std::abs(next[static_cast<std::size_t>(s)] - sol.values[static_cast<std::size_t>(s)]));
        }
        sol.values.swap(next);
        if (residual < tolerance) break;
    }
    backup(sol.values);
    sol.policy.assign(static_cast<std::size_t>(n), 0);
    for (int s = 0; s < n; ++s) {
        const auto* row = &sol.q[static_cast<std::size_t>(s * A)];
        const double best = *std::max_element(row, row + A);
        for (int a = 0; a < A; ++a)
            if (row[a] >= best - tie_tolerance) {
                sol.policy[static_cast<std::size_t>(s)] = a;
                break;
            }
    }
    return sol;
}

inline MdpSolution solve_mdp(const ChainMDP& mdp) {
    return solve_mdp(mdp, [&mdp](int s, int a, int s2) { return mdp.r(s, a, s2); });
}

// r(s, a, s') + gamma * phi(s') - phi(s)
inline RewardFn potential_shaped(const ChainMDP& mdp, std::vector<double> potential) {
    return [&mdp, phi = std::move(potential)](int s, int a, int s2) {
        return mdp.r(s, a, s2) + mdp.gamma * phi[static_cast<std::size_t>(s2)] - phi[static_cast<std::size_t>(s)];
    };
}

}  // namespace conspec::env
