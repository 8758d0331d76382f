#pragma once

// Feedforward actor-critic trained with the clipped PPO objective.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "conspec/adam.hpp"
#include "conspec/autodiff.hpp"
#include "conspec/nn.hpp"
#include "conspec/rng.hpp"

namespace conspec::ppo {

using ad::Tape;
using ad::Var;

struct PolicyConfig {
    std::size_t obs_dim = 75;
    std::size_t hidden = 64;
    std::size_t actions = 5;
};

class PolicyNet {
public:
    PolicyNet(const PolicyConfig& cfg, Rng& rng)
        : trunk_in(cfg.obs_dim, cfg.hidden, rng, 1.0),
          trunk_out(cfg.hidden, cfg.hidden, rng, 1.0),
          policy_head(cfg.hidden, cfg.actions, rng, 0.01),
          value_head(cfg.hidden, 1, rng, 1.0) {}

    nn::Linear trunk_in, trunk_out, policy_head, value_head;

    std::size_t obs_dim() const { return trunk_in.in_features(); }
    std::size_t action_count() const { return policy_head.out_features(); }

    struct Output {
        Var logits;  // [N x A]
        Var value;   // [N]
    };

    Output forward(Tape& tape, const Var& obs) const {
        auto h = ad::tanh(tape, trunk_out(tape, ad::tanh(tape, trunk_in(tape, obs))));
        auto v = value_head(tape, h);
        return {policy_head(tape, h), ad::reshape(tape, v, {v->shape[0]})};
    }

    std::vector<Var> parameters() const {
        return {trunk_in.weight,    trunk_in.bias,    trunk_out.weight,  trunk_out.bias,
                policy_head.weight, policy_head.bias, value_head.weight, value_head.bias};
    }
};

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) z += (p[a] = std::exp(logits[a] - mx));
    for (auto& v : p) v /= z;
    return p;
}

// Inverse-CDF draw; the last action absorbs rounding.
inline int sample_categorical(std::span<const double> probs, Rng& rng) {
    const double u = rng.uniform();
    double c = 0.0;
    for (std::size_t a = 0; a + 1 < probs.size(); ++a) {
        c += probs[a];
        if (u < c) return static_cast<int>(a);
    }
    return static_cast<int>(probs.size()) - 1;
}

struct PolicyEval {
    std::vector<double> probs;
    double value = 0.0;
};

// Forward pass without recording gradients of interest; rows of `obs` are
// observations [N x obs_dim].
inline std::vector<PolicyEval> evaluate(const PolicyNet& net, std::span<const double> obs) {
    const std::size_t D = net.obs_dim();
    if (obs.size() % D != 0) throw ad::ShapeError("evaluate: observation buffer is not a multiple of obs_dim");
    const std::size_t N = obs.size() / D;
    if (N == 0) return {};
    Tape tape;
    auto out = net.forward(tape, ad::constant({N, D}, {obs.begin(), obs.end()}));
    const std::size_t A = net.action_count();
    std::vector<PolicyEval> res(N);
    for (std::size_t n = 0; n < N; ++n) {
        res[n].probs = softmax({out.logits->value.data() + n * A, A});
        res[n].value = out.value->value[n];
    }
    return res;
}

struct ActResult {
    int action = 0;
    double log_prob = 0.0;
    double value = 0.0;
};

inline ActResult act_from(const PolicyEval& e, Rng& rng) {
    const int a = sample_categorical(e.probs, rng);
    return {a, std::log(e.probs[static_cast<std::size_t>(a)]), e.value};
}

inline ActResult act(const PolicyNet& net, std::span<const double> obs, Rng& rng) {
    return act_from(evaluate(net, obs).front(), rng);
}

// ---------------------------------------------------------------------------
// Rollouts

// B fixed-length episodes stored flat, sample n = k * T + t.
struct RolloutBatch {
    std::size_t episodes = 0;
    std::size_t steps = 0;
    std::size_t obs_dim = 0;
    std::vector<double> observations;  // [N x obs_dim]
    std::vector<int> actions;
    std::vector<double> log_probs;     // behaviour policy
    std::vector<double> values;
    std::vector<double> rewards;       // r_total
    std::vector<double> advantages;
    std::vector<double> returns;

    std::size_t size() const { return episodes * steps; }

    void validate() const {
        const std::size_t N = size();
        if (observations.size() != N * obs_dim || actions.size() != N || log_probs.size() != N ||
            values.size() != N || rewards.size() != N)
            throw std::invalid_argument("rollout batch: inconsistent field lengths");
    }
};

// GAE over each episode; the value after the last step is 0.
inline void compute_advantages(RolloutBatch& b, double gamma, double gae_lambda) {
    b.validate();
    b.advantages.assign(b.size(), 0.0);
    b.returns.assign(b.size(), 0.0);
    for (std::size_t k = 0; k < b.episodes; ++k) {
        double next_value = 0.0, gae = 0.0;
        for (std::size_t t = b.steps; t-- > 0;) {
            const std::size_t n = k * b.steps + t;
            const double delta = b.rewards[n] + gamma * next_value - b.values[n];
            gae = delta + gamma * gae_lambda * gae;
            b.advantages[n] = gae;
            b.returns[n] = gae + b.values[n];
            next_value = b.values[n];
        }
    }
}

// Shift to mean 0 and scale to unit (population) std.
inline void normalize_advantages(std::vector<double>& adv) {
    if (adv.empty()) return;
    const double n = static_cast<double>(adv.size());
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / n);
    for (auto& a : adv) a = (a - mean) / (sd + 1e-8);
}

// ---------------------------------------------------------------------------
// Loss

struct PpoConfig {
    double clip = 0.08;
    double value_coef = 0.5;
    double entropy_coef = 0.02;
    double max_grad_norm = 0.5;
    std::size_t epochs = 1;
    std::size_t minibatches = 1;
};

struct PpoLoss {
    Var total;
    Var policy;   // -mean clipped surrogate
    Var value;    // mean squared error
    Var entropy;  // mean policy entropy
};

// Loss over samples `idx` of `b` (advantages already normalised). Distinct
// observations go through the network once.
inline PpoLoss ppo_loss(Tape& tape, const PolicyNet& net, const RolloutBatch& b, std::span<const std::size_t> idx,
                        const PpoConfig& cfg) {
    const std::size_t D = b.obs_dim, M = idx.size();
    if (M == 0) throw std::invalid_argument("ppo_loss: empty sample set");
    std::unordered_map<std::string, std::size_t> seen;
    std::vector<double> rows;
    std::vector<std::size_t> row_of(M);
    for (std::size_t j = 0; j < M; ++j) {
        const double* o = b.observations.data() + idx[j] * D;
        std::string key(reinterpret_cast<const char*>(o), D * sizeof(double));
        auto [it, inserted] = seen.try_emplace(std::move(key), seen.size());
        if (inserted) rows.insert(rows.end(), o, o + D);
        row_of[j] = it->second;
    }
    const std::size_t U = seen.size();
    auto out = net.forward(tape, ad::constant({U, D}, std::move(rows)));

    auto logp_u = ad::log_softmax_last(tape, out.logits);                       // [U x A]
    auto ent_u = ad::scale(tape, ad::sum_last(tape, ad::mul(tape, ad::softmax_last(tape, out.logits), logp_u)), -1.0);
    auto logp_all = ad::index_select(tape, logp_u, 0, row_of);                   // [M x A]
    std::vector<int> acts(M);
    std::vector<double> old_logp(M), adv(M), ret(M);
    for (std::size_t j = 0; j < M; ++j) {
        acts[j] = b.actions[idx[j]];
        old_logp[j] = b.log_probs[idx[j]];
        adv[j] = b.advantages[idx[j]];
        ret[j] = b.returns[idx[j]];
    }
    auto logp = ad::pick_last(tape, logp_all, acts);
    auto ratio = ad::exp(tape, ad::sub(tape, logp, ad::constant({M}, std::move(old_logp))));
    auto A = ad::constant({M}, std::move(adv));
    auto surr = ad::minimum(tape, ad::mul(tape, ratio, A),
                            ad::mul(tape, ad::clamp(tape, ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), A));

    PpoLoss loss;
    loss.policy = ad::scale(tape, ad::mean(tape, surr), -1.0);
    auto v = ad::index_select(tape, out.value, 0, row_of);
    loss.value = ad::mean(tape, ad::square(tape, ad::sub(tape, v, ad::constant({M}, std::move(ret)))));
    loss.entropy = ad::mean(tape, ad::index_select(tape, ent_u, 0, row_of));
    loss.total = ad::add(tape, loss.policy,
                         ad::sub(tape, ad::scale(tape, loss.value, cfg.value_coef),
                                 ad::scale(tape, loss.entropy, cfg.entropy_coef)));
    return loss;
}

struct PpoStats {
    double loss = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double grad_norm = 0.0;
    std::size_t updates = 0;
};

// `cfg.epochs` passes over the batch, each split into `cfg.minibatches`
// episode-aligned chunks in a shuffled episode order.
inline PpoStats ppo_update(RolloutBatch& b, PolicyNet& net, ad::Adam& opt, const PpoConfig& cfg, Rng& rng) {
    if (b.advantages.size() != b.size()) throw std::logic_error("ppo_update: advantages not computed");
    PpoStats stats;
    const auto params = net.parameters();
    std::vector<std::size_t> order(b.episodes);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t mb = std::max<std::size_t>(1, std::min(cfg.minibatches, b.episodes));
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        if (mb > 1)
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (std::size_t m = 0; m < mb; ++m) {
            const std::size_t lo = m * b.episodes / mb, hi = (m + 1) * b.episodes / mb;
            std::vector<std::size_t> idx;
            for (std::size_t q = lo; q < hi; ++q)
                for (std::size_t t = 0; t < b.steps; ++t) idx.push_back(order[q] * b.steps + t);
            Tape tape;
            auto loss = ppo_loss(tape, net, b, idx, cfg);
            if (!std::isfinite(loss.total->item())) throw std::runtime_error("ppo: non-finite loss");
            tape.backward(loss.total);
            for (const auto& p : params) p->grad_buffer();
            stats.grad_norm = ad::clip_grad_norm(params, cfg.max_grad_norm);
            opt.step();
            stats.loss = loss.total->item();
            stats.policy_loss = loss.policy->item();
            stats.value_loss = loss.value->item();
            stats.entropy = loss.entropy->item();
            ++stats.updates;
        }
    }
    return stats;
}

}  // namespace conspec::ppo
