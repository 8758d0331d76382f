#pragma once

// Verification suites shared by the CLI and the acceptance runner:
// finite-difference gradient checks and the potential-shaping oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "conspec/autodiff.hpp"
#include "conspec/conspec.hpp"
#include "conspec/mdp.hpp"
#include "conspec/memory.hpp"
#include "conspec/ppo.hpp"
#include "conspec/rng.hpp"

namespace conspec::verify {

using ad::Tape;
using ad::Var;

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8) over all
// components of `params`, with central differences of step `h`.
inline double gradient_error(const std::vector<Var>& params, const std::function<Var(Tape&)>& build,
                             double h = kFdStep) {
    for (const auto& p : params) p->zero_grad();
    {
        Tape tape;
        auto loss = build(tape);
        tape.backward(loss);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (const auto& p : params) {
        const std::vector<double> analytic = p->has_grad() ? p->grad : std::vector<double>(p->size(), 0.0);
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            Tape t1;
            const double up = build(t1)->item();
            p->value[i] = keep - h;
            Tape t2;
            const double down = build(t2)->item();
            p->value[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            diff += (analytic[i] - numeric) * (analytic[i] - numeric);
            na += analytic[i] * analytic[i];
            nn += numeric * numeric;
        }
    }
    for (const auto& p : params) p->zero_grad();
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

struct SuiteResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t failures = 0;
    double worst = 0.0;

    bool passed() const { return instances > 0 && failures == 0; }
};

namespace detail {

inline std::vector<double> uniform_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Values bounded away from zero, for ops with a kink there.
inline std::vector<double> away_from_zero(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
    return v;
}

inline Var weighted(Tape& tape, const Var& y, Rng& rng) {
    return ad::sum(tape, ad::mul(tape, y, ad::constant(y->shape, uniform_vec(rng, y->size()))));
}

inline void record(SuiteResult& r, double err) {
    ++r.instances;
    r.worst = std::max(r.worst, err);
    if (!(err < kGradTolerance)) ++r.failures;
}

}  // namespace detail

// Every primitive, `instances` random inputs each, under a random linear
// read-out so the scalar loss exercises every output entry.
inline std::vector<SuiteResult> check_primitives(std::size_t instances, std::uint64_t seed) {
    using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;
    struct Case {
        std::string name;
        std::function<std::vector<Var>(Rng&)> inputs;
        Builder op;
    };
    auto p = [](ad::Shape s, std::vector<double> v) { return ad::parameter(std::move(s), std::move(v)); };
    auto mat = [&](Rng& r, std::size_t a, std::size_t b) { return p({a, b}, detail::uniform_vec(r, a * b)); };
    std::vector<Case> cases = {
        {"add", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4), mat(r, 3, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::add(t, x[0], x[1]); }},
        {"sub", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4), mat(r, 3, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::sub(t, x[0], x[1]); }},
        {"mul", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4), mat(r, 3, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::mul(t, x[0], x[1]); }},
        {"minimum",
         [&](Rng& r) {
             auto a = mat(r, 3, 4);
             auto b = p({3, 4}, a->value);
             for (auto& v : b->value) v += (r.uniform() < 0.5 ? -1.0 : 1.0) * r.uniform(0.05, 0.5);
             return std::vector<Var>{a, b};
         },
         [](Tape& t, const std::vector<Var>& x) { return ad::minimum(t, x[0], x[1]); }},
        {"scale", [&](Rng& r) { return std::vector<Var>{mat(r, 2, 5)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::scale(t, x[0], -1.7); }},
        {"add_scalar", [&](Rng& r) { return std::vector<Var>{mat(r, 2, 5)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::add_scalar(t, x[0], 0.3); }},
        {"relu", [&](Rng& r) { return std::vector<Var>{p({10}, detail::away_from_zero(r, 10))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::relu(t, x[0]); }},
        {"tanh", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 3)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::tanh(t, x[0]); }},
        {"exp", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 3)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::exp(t, x[0]); }},
        {"abs", [&](Rng& r) { return std::vector<Var>{p({10}, detail::away_from_zero(r, 10))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::abs(t, x[0]); }},
        {"square", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 3)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::square(t, x[0]); }},
        {"clamp",
         [&](Rng& r) {
             std::vector<double> v(10);
             for (auto& x : v) {
                 x = r.uniform(-1.0, 1.0);
                 if (std::abs(std::abs(x) - 0.5) < 0.05) x += 0.1;
             }
             return std::vector<Var>{p({10}, v)};
         },
         [](Tape& t, const std::vector<Var>& x) { return ad::clamp(t, x[0], -0.5, 0.5); }},
        {"matmul", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4), mat(r, 4, 2)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::matmul(t, x[0], x[1]); }},
        {"affine", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4), mat(r, 4, 2), p({2}, detail::uniform_vec(r, 2))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::affine(t, x[0], x[1], x[2]); }},
        {"cosine", [&](Rng& r) { return std::vector<Var>{p({5}, detail::uniform_vec(r, 5)), p({5}, detail::uniform_vec(r, 5))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::cosine(t, x[0], x[1]); }},
        {"cosine_rows", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4), mat(r, 5, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::cosine_rows(t, x[0], x[1]); }},
        {"cosine_rows_batched",
         [&](Rng& r) {
             return std::vector<Var>{p({2, 3, 4}, detail::uniform_vec(r, 24)), p({2, 3, 4}, detail::uniform_vec(r, 24))};
         },
         [](Tape& t, const std::vector<Var>& x) { return ad::cosine_rows(t, x[0], x[1]); }},
        {"reshape", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::reshape(t, x[0], {2, 6}); }},
        {"swap01", [&](Rng& r) { return std::vector<Var>{p({2, 3, 4}, detail::uniform_vec(r, 24))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::swap01(t, x[0]); }},
        {"index_select", [&](Rng& r) { return std::vector<Var>{p({3, 4, 2}, detail::uniform_vec(r, 24))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::index_select(t, x[0], 1, {3, 0, 0, 2}); }},
        {"gather_flat", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::gather_flat(t, x[0], {11, 0, 5, 5}); }},
        {"pick_last", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 5)}; },
         [](Tape& t, const std::vector<Var>& x) {
             const std::vector<int> idx = {4, 0, 2};
             return ad::pick_last(t, x[0], idx);
         }},
        {"sum", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::sum(t, x[0]); }},
        {"mean", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 4)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::mean(t, x[0]); }},
        {"sum_axis", [&](Rng& r) { return std::vector<Var>{p({2, 3, 4}, detail::uniform_vec(r, 24))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::sum_axis(t, x[0], 1); }},
        {"max_axis",
         [&](Rng& r) {
             // distinct entries so the maximum is isolated
             std::vector<double> v(24);
             for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.1 * static_cast<double>(i);
             for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[r.below(i)]);
             return std::vector<Var>{p({2, 3, 4}, v)};
         },
         [](Tape& t, const std::vector<Var>& x) { return ad::max_axis(t, x[0], 1); }},
        {"softmax_last", [&](Rng& r) { return std::vector<Var>{p({2, 3, 4}, detail::uniform_vec(r, 24, -2, 2))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::softmax_last(t, x[0]); }},
        {"log_softmax_last", [&](Rng& r) { return std::vector<Var>{mat(r, 3, 5)}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::log_softmax_last(t, x[0]); }},
        {"l1_normalize_last", [&](Rng& r) { return std::vector<Var>{p({3, 4}, detail::uniform_vec(r, 12, 0.1, 1.0))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::l1_normalize_last(t, x[0]); }},
        {"neg_entropy_last", [&](Rng& r) { return std::vector<Var>{p({3, 4}, detail::uniform_vec(r, 12, 0.05, 1.0))}; },
         [](Tape& t, const std::vector<Var>& x) { return ad::neg_entropy_last(t, x[0]); }},
    };

    std::vector<SuiteResult> out;
    Rng rng(seed);
    for (const auto& c : cases) {
        SuiteResult res{c.name};
        for (std::size_t n = 0; n < instances; ++n) {
            auto xs = c.inputs(rng);
            Rng readout = rng.split();
            auto build = [&](Tape& t) {
                Rng r = readout;  // same read-out weights on every evaluation
                return detail::weighted(t, c.op(t, xs), r);
            };
            detail::record(res, gradient_error(xs, build));
        }
        out.push_back(res);
    }
    return out;
}

// A random small ConSpec instance: net, episodes and a loss layout. With
// `frozen`, one prototype is anchored to a different episode subset.
struct ConspecInstance {
    std::unique_ptr<core::ConspecNet> net;
    std::vector<memory::TrajectoryPtr> episodes;
    core::LossLayout layout;
    double alpha = 0.2;
    double temperature = 1.0;
};

inline ConspecInstance random_conspec_instance(Rng& rng, bool frozen) {
    core::ConspecConfig cfg;
    cfg.obs_dim = 6;
    cfg.encoder_hidden = 5;
    cfg.latent = 4;
    cfg.projection_hidden = 5;
    cfg.projection_out = 3;
    cfg.prototypes = 2 + rng.below(2);
    ConspecInstance inst;
    inst.net = std::make_unique<core::ConspecNet>(cfg, rng);
    for (auto* l : {&inst.net->encoder_in, &inst.net->encoder_out, &inst.net->projection_in})
        for (auto& b : l->bias->value) b = rng.uniform(0.05, 0.3);
    // Keeps projections away from the zero vector, where cosine is singular.
    for (auto& b : inst.net->projection_out.bias->value) b = rng.uniform(-1.0, 1.0);
    inst.temperature = rng.uniform(0.5, 2.0);
    inst.alpha = rng.uniform(0.1, 1.0);

    const std::size_t K = 3 + rng.below(2), T = 3;
    for (std::size_t k = 0; k < K; ++k) {
        auto t = std::make_shared<memory::Trajectory>();
        t->id = k;
        t->obs_dim = cfg.obs_dim;
        for (std::size_t s = 0; s < T; ++s) {
            // Continuous inputs keep the per-episode maxima well separated.
            for (std::size_t d = 0; d < cfg.obs_dim; ++d) t->observations.push_back(rng.uniform(-1.0, 1.0));
            t->actions.push_back(0);
            t->rewards.push_back(0.0);
        }
        inst.episodes.push_back(t);
    }
    // live: episode 0 (and 1 when K = 4) succeed, the rest fail
    std::vector<std::size_t> live_s = {0}, live_f;
    if (K == 4) live_s.push_back(1);
    for (std::size_t k = live_s.size(); k < K; ++k) live_f.push_back(k);
    for (std::size_t i = 0; i < cfg.prototypes; ++i) {
        inst.layout.active.push_back(i);
        if (frozen && i == 0) {
            inst.layout.success.push_back({K - 1});
            inst.layout.failure.push_back({0, K - 2});
        } else {
            inst.layout.success.push_back(live_s);
            inst.layout.failure.push_back(live_f);
        }
    }
    inst.layout.diversity_episodes = live_s;
    return inst;
}

// True when every per-episode maximum is separated from its runner-up and
// from the kinks of |.|, so central differences see a smooth function.
inline bool smooth_at(const ConspecInstance& inst, double margin = 1e-3) {
    const auto s = core::compute_scores(*inst.net, inst.episodes, inst.temperature);
    for (std::size_t i = 0; i < s.prototypes; ++i)
        for (std::size_t k = 0; k < s.episodes; ++k) {
            auto r = s.row(i, k);
            std::vector<double> v(r.begin(), r.end());
            std::sort(v.begin(), v.end(), std::greater<>());
            if (v.size() > 1 && v[0] - v[1] < margin) return false;
            if (std::abs(v[0]) < margin || std::abs(1.0 - v[0]) < margin) return false;
        }
    return true;
}

inline SuiteResult check_conspec_loss(std::size_t instances, core::Diversity diversity, bool frozen, std::uint64_t seed) {
    SuiteResult res{std::string("conspec_loss/") + (diversity == core::Diversity::entropy ? "entropy" : "orthogonality") +
                    (frozen ? "/frozen" : "/live")};
    Rng rng(seed);
    for (std::size_t n = 0; n < instances; ++n) {
        auto inst = random_conspec_instance(rng, frozen);
        while (!smooth_at(inst)) inst = random_conspec_instance(rng, frozen);
        auto build = [&](Tape& t) {
            auto s = core::score_graph(t, *inst.net, inst.episodes);
            return core::conspec_loss(t, s, inst.layout, inst.alpha, diversity, inst.temperature).total;
        };
        detail::record(res, gradient_error(inst.net->parameters(), build));
    }
    return res;
}

inline SuiteResult check_ppo_loss(std::size_t instances, std::uint64_t seed) {
    SuiteResult res{"ppo_loss"};
    Rng rng(seed);
    for (std::size_t n = 0; n < instances; ++n) {
        ppo::PolicyNet net({6, 5, 5}, rng);
        for (auto& w : net.policy_head.weight->value) w *= 50.0;  // non-trivial logits
        ppo::RolloutBatch b;
        b.episodes = 2;
        b.steps = 3;
        b.obs_dim = 6;
        for (std::size_t i = 0; i < b.size() * b.obs_dim; ++i) b.observations.push_back(rng.uniform() < 0.4 ? 1.0 : 0.0);
        const auto evals = ppo::evaluate(net, b.observations);
        for (std::size_t i = 0; i < b.size(); ++i) {
            const int a = static_cast<int>(rng.below(5));
            b.actions.push_back(a);
            // Behaviour log-prob shifted so some ratios fall outside the clip
            // range and some inside, none on its edge.
            double shift = rng.uniform(0.0, 0.2);
            if (std::abs(shift - 0.08) < 0.01) shift += 0.03;
            b.log_probs.push_back(std::log(evals[i].probs[static_cast<std::size_t>(a)]) +
                                  (rng.uniform() < 0.5 ? -shift : shift));
            b.values.push_back(0.0);
            b.rewards.push_back(0.0);
            b.advantages.push_back(rng.uniform(-1.0, 1.0));
            b.returns.push_back(rng.uniform(-1.0, 1.0));
        }
        std::vector<std::size_t> idx(b.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        ppo::PpoConfig cfg;
        auto build = [&](Tape& t) { return ppo::ppo_loss(t, net, b, idx, cfg).total; };
        detail::record(res, gradient_error(net.parameters(), build));
    }
    return res;
}

// Criterion suite: the contrastive loss in both diversity modes, with and
// without a frozen prototype, and the PPO loss.
inline std::vector<SuiteResult> check_losses(std::size_t instances, std::uint64_t seed) {
    std::vector<SuiteResult> out;
    std::uint64_t s = seed;
    for (auto d : {core::Diversity::orthogonality, core::Diversity::entropy})
        for (bool frozen : {false, true}) out.push_back(check_conspec_loss(instances, d, frozen, ++s));
    out.push_back(check_ppo_loss(instances, ++s));
    return out;
}

// ---------------------------------------------------------------------------
// Shaping

struct ShapingResult {
    std::size_t mdps = 0;
    std::size_t identical = 0;  // MDPs whose policy survived every potential
    std::size_t comparisons = 0;
    std::size_t mismatches = 0;
};

// `mdps` random chains with `states` states (0 = random in [2, 10]), each
// solved under `potentials` random potentials with and without shaping.
inline ShapingResult check_policy_invariance(std::size_t mdps, std::size_t potentials, int states, std::uint64_t seed) {
    ShapingResult res;
    Rng rng(seed);
    for (std::size_t m = 0; m < mdps; ++m) {
        const int n = states > 0 ? states : 2 + static_cast<int>(rng.below(9));
        const auto mdp = env::ChainMDP::random(n, rng.uniform(0.5, 0.99), rng);
        const auto base = env::solve_mdp(mdp);
        bool same = true;
        for (std::size_t q = 0; q < potentials; ++q) {
            const auto phi = detail::uniform_vec(rng, static_cast<std::size_t>(n), -5.0, 5.0);
            const auto shaped = env::solve_mdp(mdp, env::potential_shaped(mdp, phi));
            ++res.comparisons;
            if (shaped.policy != base.policy) {
                ++res.mismatches;
                same = false;
            }
        }
        ++res.mdps;
        if (same) ++res.identical;
    }
    return res;
}

struct TelescopingResult {
    std::size_t sequences = 0;
    double worst = 0.0;
};

// sum_t gamma^(t-1) r_t against lambda gamma^T sum_i s_iT on random score
// sequences.
inline TelescopingResult check_telescoping(std::size_t sequences, std::uint64_t seed, double threshold = 0.6) {
    TelescopingResult res;
    Rng rng(seed);
    for (std::size_t n = 0; n < sequences; ++n) {
        const std::size_t H = 1 + rng.below(4), T = 1 + rng.below(50);
        const double lambda = rng.uniform(0.0, 1.0), gamma = rng.uniform(0.5, 1.0);
        auto raw = detail::uniform_vec(rng, H * T, -1.0, 1.0);
        const auto s = core::make_score_tensor(H, 1, T, raw, 1.0);
        std::vector<std::size_t> active(H);
        for (std::size_t i = 0; i < H; ++i) active[i] = i;
        const auto r = core::intrinsic_reward_potential(s, active, lambda, gamma, threshold);
        double lhs = 0.0, disc = 1.0;
        for (std::size_t t = 0; t < T; ++t, disc *= gamma) lhs += disc * r[t];
        double last = 0.0;
        for (std::size_t i = 0; i < H; ++i) {
            const double v = s.at(i, 0, T - 1);
            last += v >= threshold ? v : 0.0;
        }
        const double rhs = lambda * std::pow(gamma, static_cast<double>(T)) * last;
        res.worst = std::max(res.worst, std::abs(lhs - rhs));
        ++res.sequences;
    }
    return res;
}

}  // namespace conspec::verify
