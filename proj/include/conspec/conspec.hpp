#pragma once

// Contrastive prototype learning over success / failure memories.
//
// An encoder f and a projection g map every observation to a vector that is
// compared with each learned prototype h_i by cosine similarity. Per episode
// the maximal score over time is pushed toward 1 on successes and toward 0 on
// failures; a diversity term keeps prototypes apart. Thresholded scores are
// turned into intrinsic rewards for the policy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "conspec/adam.hpp"
#include "conspec/autodiff.hpp"
#include "conspec/memory.hpp"
#include "conspec/nn.hpp"
#include "conspec/rng.hpp"

namespace conspec::core {

using ad::Tape;
using ad::Var;
using memory::TrajectoryPtr;

enum class Diversity { orthogonality, entropy };
enum class RewardScheme { windowed, potential };

struct ConspecConfig {
    std::size_t obs_dim = 75;
    std::size_t encoder_hidden = 64;
    std::size_t latent = 32;
    std::size_t projection_hidden = 64;
    std::size_t projection_out = 32;
    std::size_t prototypes = 8;
    double temperature = 1.0;
    double threshold = 0.6;
    std::size_t reward_window = 7;
    int freeze_steps = 25;
    bool freeze = true;
    bool recruit = false;
    std::size_t initial_active = 3;
    Diversity diversity = Diversity::orthogonality;
    double alpha = 0.2;
    // Only prototypes that are frozen or currently meet the separation
    // criterion pay intrinsic reward.
    bool reward_separated_only = false;
};

// ---------------------------------------------------------------------------
// Network

class ConspecNet {
public:
    ConspecNet(const ConspecConfig& cfg, Rng& rng)
        : encoder_in(cfg.obs_dim, cfg.encoder_hidden, rng, std::sqrt(2.0)),
          encoder_out(cfg.encoder_hidden, cfg.latent, rng, std::sqrt(2.0)),
          projection_in(cfg.latent, cfg.projection_hidden, rng, std::sqrt(2.0)),
          projection_out(cfg.projection_hidden, cfg.projection_out, rng, 1.0) {
        std::vector<double> h(cfg.prototypes * cfg.projection_out);
        for (auto& v : h) v = rng.normal();
        prototypes = ad::parameter({cfg.prototypes, cfg.projection_out}, std::move(h));
    }

    nn::Linear encoder_in, encoder_out;        // W
    nn::Linear projection_in, projection_out;  // theta
    Var prototypes;                            // h, [H x d]

    std::size_t prototype_count() const { return prototypes->shape[0]; }
    std::size_t embedding_dim() const { return prototypes->shape[1]; }
    std::size_t obs_dim() const { return encoder_in.in_features(); }

    // z = f_W(O)
    Var encode(Tape& tape, const Var& obs) const {
        return ad::relu(tape, encoder_out(tape, ad::relu(tape, encoder_in(tape, obs))));
    }

    // g_theta(f_W(O)), rows of `obs` are observations.
    Var project(Tape& tape, const Var& obs) const {
        return projection_out(tape, ad::relu(tape, projection_in(tape, encode(tape, obs))));
    }

    std::vector<Var> parameters() const {
        return {encoder_in.weight,    encoder_in.bias,     encoder_out.weight,     encoder_out.bias,
                projection_in.weight, projection_in.bias, projection_out.weight, projection_out.bias,
                prototypes};
    }

    // Re-draw any prototype whose norm collapsed below 1e-8.
    void rerandomize_degenerate(Rng& rng) {
        const std::size_t d = embedding_dim();
        for (std::size_t i = 0; i < prototype_count(); ++i) {
            double n = 0.0;
            for (std::size_t c = 0; c < d; ++c) n += prototypes->value[i * d + c] * prototypes->value[i * d + c];
            if (std::sqrt(n) < 1e-8)
                for (std::size_t c = 0; c < d; ++c) prototypes->value[i * d + c] = rng.normal();
        }
    }
};

// ---------------------------------------------------------------------------
// Scores

// Distinct observation rows across a set of equal-length episodes, plus the
// row index of every (episode, step).
struct UniqueObservations {
    std::size_t width = 0;
    std::vector<double> rows;
    std::vector<std::size_t> index;  // [K x T]

    std::size_t count() const { return width ? rows.size() / width : 0; }
};

inline UniqueObservations unique_observations(std::span<const TrajectoryPtr> episodes) {
    UniqueObservations u;
    if (episodes.empty()) return u;
    u.width = episodes.front()->obs_dim;
    const std::size_t T = episodes.front()->length();
    std::unordered_map<std::string, std::size_t> seen;
    u.index.reserve(episodes.size() * T);
    for (const auto& ep : episodes) {
        if (ep->length() != T || ep->obs_dim != u.width)
            throw std::invalid_argument("scores: episodes must share length and observation width");
        for (std::size_t t = 0; t < T; ++t) {
            auto o = ep->observation(t);
            std::string key(reinterpret_cast<const char*>(o.data()), o.size() * sizeof(double));
            auto [it, inserted] = seen.try_emplace(std::move(key), seen.size());
            if (inserted) u.rows.insert(u.rows.end(), o.begin(), o.end());
            u.index.push_back(it->second);
        }
    }
    return u;
}

// s_ikt = cos(h_i, g(f(O_kt))) as a differentiable [H x K x T] tensor.
inline Var score_graph(Tape& tape, const ConspecNet& net, std::span<const TrajectoryPtr> episodes) {
    if (episodes.empty()) throw std::invalid_argument("score_graph: no episodes");
    const auto u = unique_observations(episodes);
    if (u.width != net.obs_dim())
        throw ad::ShapeError("score_graph: observation width " + std::to_string(u.width) +
                             " does not match encoder input " + std::to_string(net.obs_dim()));
    const std::size_t K = episodes.size(), T = episodes.front()->length();
    auto obs = ad::constant({u.count(), u.width}, u.rows);
    auto proj = net.project(tape, obs);
    auto cos = ad::cosine_rows(tape, net.prototypes, proj);  // [H x U]
    auto expanded = ad::index_select(tape, cos, 1, u.index);  // [H x K*T]
    return ad::reshape(tape, expanded, {net.prototype_count(), K, T});
}

struct ScoreTensor {
    std::size_t prototypes = 0, episodes = 0, steps = 0;
    std::vector<double> raw;     // [H x K x T], in [-1, 1]
    std::vector<double> sparse;  // softmax over t of raw / temperature

    double at(std::size_t i, std::size_t k, std::size_t t) const { return raw[(i * episodes + k) * steps + t]; }
    std::span<const double> row(std::size_t i, std::size_t k) const {
        return {raw.data() + (i * episodes + k) * steps, steps};
    }
    std::span<const double> sparse_row(std::size_t i, std::size_t k) const {
        return {sparse.data() + (i * episodes + k) * steps, steps};
    }
    double max_over_time(std::size_t i, std::size_t k) const {
        auto r = row(i, k);
        return *std::max_element(r.begin(), r.end());
    }
    std::size_t argmax_over_time(std::size_t i, std::size_t k) const {
        auto r = row(i, k);
        return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
};

inline ScoreTensor make_score_tensor(std::size_t H, std::size_t K, std::size_t T, std::vector<double> raw,
                                     double temperature) {
    ScoreTensor s{H, K, T, std::move(raw), {}};
    s.sparse.resize(s.raw.size());
    for (std::size_t r = 0; r < H * K; ++r) {
        const double* x = &s.raw[r * T];
        double* y = &s.sparse[r * T];
        const double mx = *std::max_element(x, x + T) / temperature;
        double z = 0.0;
        for (std::size_t t = 0; t < T; ++t) z += (y[t] = std::exp(x[t] / temperature - mx));
        for (std::size_t t = 0; t < T; ++t) y[t] /= z;
    }
    return s;
}

inline ScoreTensor compute_scores(const ConspecNet& net, std::span<const TrajectoryPtr> episodes, double temperature) {
    Tape tape;
    auto s = score_graph(tape, net, episodes);
    return make_score_tensor(s->shape[0], s->shape[1], s->shape[2], s->value, temperature);
}

// ---------------------------------------------------------------------------
// Diversity

namespace detail {

// x: [B x H x T] sparsified score vectors, B episodes. Returns the summed D.
inline Var orthogonality_sum(Tape& tape, const Var& x) {
    const std::size_t B = x->shape[0], H = x->shape[1];
    auto gram = ad::cosine_rows(tape, x, x);  // [B x H x H]
    std::vector<double> mask(B * H * H, 1.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < H; ++i) mask[(b * H + i) * H + i] = 0.0;
    return ad::sum(tape, ad::mul(tape, gram, ad::constant({B, H, H}, std::move(mask))));
}

inline Var entropy_sum(Tape& tape, const Var& x) {
    auto pooled = ad::sum_axis(tape, x, 1);  // [B x T]
    return ad::sum(tape, ad::neg_entropy_last(tape, ad::l1_normalize_last(tape, pooled)));
}

}  // namespace detail

// sum over ordered pairs i != j of cos(s_i, s_j); `sparse` is [H x T].
inline Var diversity_orthogonality(Tape& tape, const Var& sparse) {
    ad::detail::require_rank("diversity_orthogonality", *sparse, 2);
    return detail::orthogonality_sum(tape, ad::reshape(tape, sparse, {1, sparse->shape[0], sparse->shape[1]}));
}

// -Entropy(L1(sum_i s_i)), natural log; `sparse` is [H x T].
inline Var diversity_entropy(Tape& tape, const Var& sparse) {
    ad::detail::require_rank("diversity_entropy", *sparse, 2);
    return detail::entropy_sum(tape, ad::reshape(tape, sparse, {1, sparse->shape[0], sparse->shape[1]}));
}

// ---------------------------------------------------------------------------
// Contrastive loss

// Which score columns (episodes) define each active prototype's terms.
struct LossLayout {
    std::vector<std::size_t> active;                    // prototype rows
    std::vector<std::vector<std::size_t>> success;      // per active prototype
    std::vector<std::vector<std::size_t>> failure;      // per active prototype
    std::vector<std::size_t> diversity_episodes;        // live success episodes
};

struct LossTerms {
    Var total;
    Var success;
    Var failure;
    Var diversity;
};

//   sum_i mean_{k in S_i} |1 - max_t s_ikt|
// + sum_i mean_{k in F_i} |max_t s_ikt|
// + alpha / H_active * sum_{k in S} D({softmax_t(s_ik / temperature)}_i)
// `scores` is [H x K x T] of raw cosine scores.
inline LossTerms conspec_loss(Tape& tape, const Var& scores, const LossLayout& layout, double alpha,
                              Diversity diversity, double temperature = 1.0) {
    ad::detail::require_rank("conspec_loss", *scores, 3);
    if (layout.success.size() != layout.active.size() || layout.failure.size() != layout.active.size())
        throw std::invalid_argument("conspec_loss: layout lists must match the active prototype count");
    const std::size_t K = scores->shape[1];
    auto maxima = ad::max_last(tape, scores);  // [H x K]

    auto weighted_gather = [&](const std::vector<std::vector<std::size_t>>& sets, std::vector<double>& weights) {
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < layout.active.size(); ++j) {
            if (sets[j].empty()) continue;
            const double w = 1.0 / static_cast<double>(sets[j].size());
            for (auto k : sets[j]) {
                idx.push_back(layout.active[j] * K + k);
                weights.push_back(w);
            }
        }
        return idx;
    };

    LossTerms terms;
    std::vector<Var> parts;
    {
        std::vector<double> w;
        auto idx = weighted_gather(layout.success, w);
        if (!idx.empty()) {
            const std::size_t n = idx.size();
            auto g = ad::gather_flat(tape, maxima, std::move(idx));
            auto gap = ad::abs(tape, ad::add_scalar(tape, ad::scale(tape, g, -1.0), 1.0));
            terms.success = ad::sum(tape, ad::mul(tape, gap, ad::constant({n}, std::move(w))));
            parts.push_back(terms.success);
        }
    }
    {
        std::vector<double> w;
        auto idx = weighted_gather(layout.failure, w);
        if (!idx.empty()) {
            const std::size_t n = idx.size();
            auto g = ad::abs(tape, ad::gather_flat(tape, maxima, std::move(idx)));
            terms.failure = ad::sum(tape, ad::mul(tape, g, ad::constant({n}, std::move(w))));
            parts.push_back(terms.failure);
        }
    }
    if (alpha != 0.0 && !layout.active.empty() && !layout.diversity_episodes.empty()) {
        auto sparse = ad::softmax_last(tape, ad::scale(tape, scores, 1.0 / temperature));
        auto sel = ad::index_select(tape, ad::index_select(tape, sparse, 0, layout.active), 1,
                                    layout.diversity_episodes);
        auto per_episode = ad::swap01(tape, sel);  // [nS x H_active x T]
        auto d = diversity == Diversity::orthogonality ? detail::orthogonality_sum(tape, per_episode)
                                                       : detail::entropy_sum(tape, per_episode);
        terms.diversity = ad::scale(tape, d, alpha / static_cast<double>(layout.active.size()));
        parts.push_back(terms.diversity);
    }
    if (parts.empty()) {
        terms.total = ad::constant(0.0);
    } else {
        terms.total = parts.front();
        for (std::size_t p = 1; p < parts.size(); ++p) terms.total = ad::add(tape, terms.total, parts[p]);
    }
    return terms;
}

// ---------------------------------------------------------------------------
// Intrinsic rewards

inline std::vector<double> thresholded(std::span<const double> s, double threshold) {
    std::vector<double> out(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) out[t] = s[t] >= threshold ? s[t] : 0.0;
    return out;
}

// lambda * s_t where s_t is the maximum of s over [t - w/2, t + w/2]
// (truncated at the episode ends); on ties only the earliest maximum pays.
inline std::vector<double> windowed_reward(std::span<const double> shat, double lambda, std::size_t window) {
    const std::size_t T = shat.size();
    const std::size_t half = window / 2;
    std::vector<double> out(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double v = shat[t];
        if (v == 0.0) continue;
        const std::size_t lo = t >= half ? t - half : 0;
        const std::size_t hi = std::min(T - 1, t + half);
        bool peak = true;
        for (std::size_t j = lo; j <= hi && peak; ++j) {
            if (j < t) peak = shat[j] < v;
            else if (j > t) peak = shat[j] <= v;
        }
        if (peak) out[t] = lambda * v;
    }
    return out;
}

// lambda * (gamma * s_t - s_{t-1}) with s_0 = 0.
inline std::vector<double> potential_reward(std::span<const double> shat, double lambda, double gamma) {
    std::vector<double> out(shat.size());
    double prev = 0.0;
    for (std::size_t t = 0; t < shat.size(); ++t) {
        out[t] = lambda * (gamma * shat[t] - prev);
        prev = shat[t];
    }
    return out;
}

// Per-(episode, step) intrinsic reward [K x T], summed over `active` prototypes.
inline std::vector<double> intrinsic_reward_windowed(const ScoreTensor& s, std::span<const std::size_t> active,
                                                     double lambda, double threshold, std::size_t window) {
    std::vector<double> out(s.episodes * s.steps, 0.0);
    for (auto i : active)
        for (std::size_t k = 0; k < s.episodes; ++k) {
            auto r = windowed_reward(thresholded(s.row(i, k), threshold), lambda, window);
            for (std::size_t t = 0; t < s.steps; ++t) out[k * s.steps + t] += r[t];
        }
    return out;
}

inline std::vector<double> intrinsic_reward_potential(const ScoreTensor& s, std::span<const std::size_t> active,
                                                      double lambda, double gamma, double threshold) {
    std::vector<double> out(s.episodes * s.steps, 0.0);
    for (auto i : active)
        for (std::size_t k = 0; k < s.episodes; ++k) {
            auto r = potential_reward(thresholded(s.row(i, k), threshold), lambda, gamma);
            for (std::size_t t = 0; t < s.steps; ++t) out[k * s.steps + t] += r[t];
        }
    return out;
}

// ---------------------------------------------------------------------------
// Freezing and recruitment

struct Separation {
    double success_mean = 0.0;
    double failure_mean = 0.0;
    bool valid = false;  // both sets non-empty

    double gap() const { return success_mean - failure_mean; }
    bool meets(double threshold) const { return valid && gap() > threshold && success_mean > threshold; }
};

inline Separation separation_of(const ScoreTensor& s, std::size_t prototype, std::span<const std::size_t> success,
                                std::span<const std::size_t> failure) {
    Separation sep;
    if (success.empty() || failure.empty()) return sep;
    for (auto k : success) sep.success_mean += s.max_over_time(prototype, k);
    for (auto k : failure) sep.failure_mean += s.max_over_time(prototype, k);
    sep.success_mean /= static_cast<double>(success.size());
    sep.failure_mean /= static_cast<double>(failure.size());
    sep.valid = true;
    return sep;
}

struct FreezeState {
    double threshold = 0.6;
    int required_steps = 25;
    std::vector<bool> frozen;
    std::vector<int> counter;
    std::vector<std::vector<TrajectoryPtr>> success_snapshot;
    std::vector<std::vector<TrajectoryPtr>> failure_snapshot;

    FreezeState() = default;
    FreezeState(std::size_t prototypes, double thr, int steps)
        : threshold(thr), required_steps(steps), frozen(prototypes, false), counter(prototypes, 0),
          success_snapshot(prototypes), failure_snapshot(prototypes) {}

    std::size_t frozen_count() const { return static_cast<std::size_t>(std::count(frozen.begin(), frozen.end(), true)); }
};

// `live[i]` is prototype i's separation measured on the live buffers. Active,
// unfrozen prototypes that meet the criterion for `required_steps`
// consecutive calls are frozen with a snapshot of the current buffers.
inline void update_freeze(FreezeState& state, std::span<const Separation> live, const memory::FifoBuffer& success,
                          const memory::FifoBuffer& failure, std::span<const std::size_t> active) {
    for (auto i : active) {
        if (state.frozen[i]) continue;
        if (live[i].meets(state.threshold)) {
            if (++state.counter[i] >= state.required_steps) {
                state.frozen[i] = true;
                state.success_snapshot[i] = success.snapshot();
                state.failure_snapshot[i] = failure.snapshot();
            }
        } else {
            state.counter[i] = 0;
        }
    }
}

struct RecruitState {
    std::size_t active = 0;
    std::size_t maximum = 0;
};

// Activates one more prototype when every active one meets the criterion.
inline bool maybe_recruit(RecruitState& state, std::span<const Separation> defining, double threshold) {
    if (state.active >= state.maximum) return false;
    for (std::size_t i = 0; i < state.active; ++i)
        if (!defining[i].meets(threshold)) return false;
    ++state.active;
    return true;
}

// ---------------------------------------------------------------------------
// Module: network, optimiser and bookkeeping together.

struct TrainStepReport {
    bool trained = false;
    double loss = 0.0;
    std::vector<Separation> separation;  // per prototype, on its defining sets
    bool recruited = false;
};

class ConspecModule {
public:
    ConspecModule(ConspecConfig cfg, Rng& rng, ad::AdamConfig adam)
        : cfg_(cfg),
          net_(cfg, rng),
          rng_(rng.split()),
          optimizer_(net_.parameters(), adam),
          freeze_(cfg.prototypes, cfg.threshold, cfg.freeze_steps),
          recruit_{cfg.recruit ? std::min(cfg.initial_active, cfg.prototypes) : cfg.prototypes, cfg.prototypes} {}

    const ConspecConfig& config() const { return cfg_; }
    ConspecNet& net() { return net_; }
    const ConspecNet& net() const { return net_; }
    const FreezeState& freeze_state() const { return freeze_; }
    const RecruitState& recruit_state() const { return recruit_; }
    const ad::Adam& optimizer() const { return optimizer_; }

    std::vector<std::size_t> active_prototypes() const {
        std::vector<std::size_t> a(recruit_.active);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = i;
        return a;
    }

    // Prototypes whose scores feed the intrinsic reward.
    std::vector<std::size_t> rewarding_prototypes() const {
        auto active = active_prototypes();
        if (!cfg_.reward_separated_only) return active;
        std::vector<std::size_t> out;
        for (auto i : active)
            if (freeze_.frozen[i] || last_separation_[i].meets(cfg_.threshold)) out.push_back(i);
        return out;
    }

    ScoreTensor score(std::span<const TrajectoryPtr> episodes) const {
        return compute_scores(net_, episodes, cfg_.temperature);
    }

    std::vector<double> intrinsic_rewards(std::span<const TrajectoryPtr> episodes, RewardScheme scheme, double lambda,
                                          double gamma) const {
        const auto active = rewarding_prototypes();
        if (active.empty()) {
            const std::size_t T = episodes.empty() ? 0 : episodes.front()->length();
            return std::vector<double>(episodes.size() * T, 0.0);
        }
        const auto s = score(episodes);
        return scheme == RewardScheme::windowed
                   ? intrinsic_reward_windowed(s, active, lambda, cfg_.threshold, cfg_.reward_window)
                   : intrinsic_reward_potential(s, active, lambda, gamma, cfg_.threshold);
    }

    struct LossGraph {
        std::vector<TrajectoryPtr> columns;  // episode of each score column
        LossLayout layout;
        Var scores;
        LossTerms terms;
        // live-buffer columns, for freeze bookkeeping
        std::vector<std::size_t> live_success, live_failure;
    };

    // Builds L over the live buffers, with frozen prototypes anchored to
    // their snapshots.
    LossGraph build_loss(Tape& tape, const memory::FifoBuffer& success, const memory::FifoBuffer& failure) const {
        LossGraph g;
        std::unordered_map<const memory::Trajectory*, std::size_t> column;
        auto col = [&](const TrajectoryPtr& t) {
            auto [it, inserted] = column.try_emplace(t.get(), g.columns.size());
            if (inserted) g.columns.push_back(t);
            return it->second;
        };
        for (const auto& t : success) g.live_success.push_back(col(t));
        for (const auto& t : failure) g.live_failure.push_back(col(t));
        g.layout.active = active_prototypes();
        for (auto i : g.layout.active) {
            if (freeze_.frozen[i]) {
                std::vector<std::size_t> s, f;
                for (const auto& t : freeze_.success_snapshot[i]) s.push_back(col(t));
                for (const auto& t : freeze_.failure_snapshot[i]) f.push_back(col(t));
                g.layout.success.push_back(std::move(s));
                g.layout.failure.push_back(std::move(f));
            } else {
                g.layout.success.push_back(g.live_success);
                g.layout.failure.push_back(g.live_failure);
            }
        }
        g.layout.diversity_episodes = g.live_success;
        g.scores = score_graph(tape, net_, g.columns);
        g.terms = conspec_loss(tape, g.scores, g.layout, cfg_.alpha, cfg_.diversity, cfg_.temperature);
        return g;
    }

    // Current separation of every active prototype, on its defining sets
    // (`defining`) and on the live buffers (`live`).
    struct SeparationView {
        std::vector<Separation> defining, live;
    };

    SeparationView separations(const memory::FifoBuffer& success, const memory::FifoBuffer& failure) const {
        SeparationView v{std::vector<Separation>(cfg_.prototypes), std::vector<Separation>(cfg_.prototypes)};
        if (success.empty() || failure.empty()) return v;
        Tape tape;
        auto g = build_loss(tape, success, failure);
        const auto s = make_score_tensor(g.scores->shape[0], g.scores->shape[1], g.scores->shape[2],
                                         g.scores->value, cfg_.temperature);
        for (std::size_t j = 0; j < g.layout.active.size(); ++j) {
            const auto i = g.layout.active[j];
            v.live[i] = separation_of(s, i, g.live_success, g.live_failure);
            v.defining[i] = separation_of(s, i, g.layout.success[j], g.layout.failure[j]);
        }
        return v;
    }

    // One gradient step on beta * L, then freeze / recruit bookkeeping on the
    // pre-step scores. No-op while the success buffer is empty.
    TrainStepReport train_step(const memory::FifoBuffer& success, const memory::FifoBuffer& failure, double beta) {
        TrainStepReport rep;
        rep.separation.resize(cfg_.prototypes);
        if (success.empty() || beta == 0.0) return rep;

        Tape tape;
        auto g = build_loss(tape, success, failure);
        rep.loss = g.terms.total->item();
        if (!std::isfinite(rep.loss)) throw std::runtime_error("conspec: non-finite loss");
        auto scaled = ad::scale(tape, g.terms.total, beta);
        if (scaled->requires_grad) {
            tape.backward(scaled);
            for (const auto& p : net_.parameters()) p->grad_buffer();
            optimizer_.step();
            net_.rerandomize_degenerate(rng_);
        }
        rep.trained = true;

        const auto s = make_score_tensor(g.scores->shape[0], g.scores->shape[1], g.scores->shape[2],
                                         g.scores->value, cfg_.temperature);
        std::vector<Separation> live(cfg_.prototypes);
        for (std::size_t j = 0; j < g.layout.active.size(); ++j) {
            const auto i = g.layout.active[j];
            live[i] = separation_of(s, i, g.live_success, g.live_failure);
            rep.separation[i] = separation_of(s, i, g.layout.success[j], g.layout.failure[j]);
        }
        if (cfg_.freeze) update_freeze(freeze_, live, success, failure, g.layout.active);
        if (cfg_.recruit) rep.recruited = maybe_recruit(recruit_, rep.separation, cfg_.threshold);
        last_separation_ = rep.separation;
        return rep;
    }

private:
    ConspecConfig cfg_;
    ConspecNet net_;
    Rng rng_;
    ad::Adam optimizer_;
    FreezeState freeze_;
    RecruitState recruit_;
    std::vector<Separation> last_separation_ = std::vector<Separation>(cfg_.prototypes);
};

}  // namespace conspec::core
