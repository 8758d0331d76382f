#pragma once

// Joint training loop: collect a batch with the policy, route episodes into
// the success / failure buffers, shape rewards with the prototype scores,
// then step PPO and the contrastive module with their own optimisers.

#include <chrono>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "conspec/checkpoint.hpp"
#include "conspec/config.hpp"
#include "conspec/conspec.hpp"
#include "conspec/env.hpp"
#include "conspec/memory.hpp"
#include "conspec/ppo.hpp"
#include "conspec/report.hpp"
#include "conspec/rng.hpp"

namespace conspec::trainer {

using memory::Trajectory;
using memory::TrajectoryPtr;

inline constexpr std::size_t kSuccessWindow = 100;

struct EpochMetrics {
    std::size_t epoch = 0;
    std::size_t episodes = 0;
    double success_rate = 0.0;  // trailing kSuccessWindow episodes
    double batch_success_rate = 0.0;
    double mean_return = 0.0;
    double mean_intrinsic = 0.0;  // per episode
    std::vector<core::Separation> separation;  // per active prototype, defining sets
    std::size_t frozen = 0;
    std::size_t active = 0;
    std::size_t success_buffer = 0;
    std::size_t failure_buffer = 0;
    bool conspec_trained = false;
    double conspec_loss = 0.0;
    std::map<std::string, std::size_t> events;  // episodes in the batch showing each event
    ppo::PpoStats ppo;
    double wall_seconds = 0.0;  // not part of the deterministic record
};

inline nlohmann::json to_json(const EpochMetrics& m) {
    nlohmann::json sep = nlohmann::json::array();
    for (const auto& s : m.separation)
        sep.push_back({{"success", s.success_mean}, {"failure", s.failure_mean}, {"valid", s.valid}});
    return {{"epoch", m.epoch},
            {"episodes", m.episodes},
            {"success_rate", m.success_rate},
            {"batch_success_rate", m.batch_success_rate},
            {"mean_return", m.mean_return},
            {"mean_intrinsic", m.mean_intrinsic},
            {"separation", sep},
            {"frozen", m.frozen},
            {"active", m.active},
            {"success_buffer", m.success_buffer},
            {"failure_buffer", m.failure_buffer},
            {"conspec_trained", m.conspec_trained},
            {"conspec_loss", m.conspec_loss},
            {"policy_loss", m.ppo.policy_loss},
            {"value_loss", m.ppo.value_loss},
            {"entropy", m.ppo.entropy},
            {"events", m.events}};
}

inline const char* kCsvHeader =
    "epoch,episodes,success_rate,batch_success_rate,mean_return,mean_intrinsic,frozen,active,conspec_loss,"
    "policy_loss,value_loss,entropy";

inline std::string csv_row(const EpochMetrics& m) {
    nlohmann::json vals = {m.success_rate, m.batch_success_rate, m.mean_return,    m.mean_intrinsic,
                           m.conspec_loss, m.ppo.policy_loss,   m.ppo.value_loss, m.ppo.entropy};
    auto d = [](const nlohmann::json& v) { return v.dump(); };
    return std::to_string(m.epoch) + "," + std::to_string(m.episodes) + "," + d(vals[0]) + "," + d(vals[1]) + "," +
           d(vals[2]) + "," + d(vals[3]) + "," + std::to_string(m.frozen) + "," + std::to_string(m.active) + "," +
           d(vals[4]) + "," + d(vals[5]) + "," + d(vals[6]) + "," + d(vals[7]);
}

class Trainer {
public:
    explicit Trainer(ExperimentConfig cfg)
        : cfg_(std::move(cfg)),
          root_(cfg_.seed),
          policy_rng_(root_.split()),
          conspec_rng_(root_.split()),
          env_rng_(root_.split()),
          act_rng_(root_.split()),
          update_rng_(root_.split()),
          eval_rng_(root_.split()),
          envs_(cfg_.optim.batch_size, env::KeyDoorEnv(cfg_.task)),
          policy_(policy_config(), policy_rng_),
          policy_opt_(policy_.parameters(), {cfg_.optim.policy_lr, 0.9, 0.999, cfg_.optim.adam_eps}),
          conspec_(cfg_.conspec_config(), conspec_rng_, {cfg_.optim.conspec_lr, 0.9, 0.999, cfg_.optim.adam_eps}),
          success_(cfg_.optim.buffer_capacity),
          failure_(cfg_.optim.buffer_capacity) {}

    const ExperimentConfig& config() const { return cfg_; }
    ppo::PolicyNet& policy() { return policy_; }
    const ppo::PolicyNet& policy() const { return policy_; }
    core::ConspecModule& conspec() { return conspec_; }
    const core::ConspecModule& conspec() const { return conspec_; }
    const memory::FifoBuffer& success_buffer() const { return success_; }
    const memory::FifoBuffer& failure_buffer() const { return failure_; }
    std::size_t epoch() const { return epoch_; }
    std::size_t episodes() const { return episodes_; }

    double success_rate() const {
        if (recent_.empty()) return 0.0;
        return static_cast<double>(std::count(recent_.begin(), recent_.end(), true)) /
               static_cast<double>(recent_.size());
    }

    // Runs B episodes in lockstep with the current policy. Returned
    // trajectories carry the environment's success flag.
    struct Collected {
        std::vector<Trajectory> episodes;
        std::vector<double> log_probs;  // [B x T]
        std::vector<double> values;     // [B x T]
    };

    Collected collect(std::size_t count, Rng& env_rng, Rng& act_rng) {
        if (envs_.size() < count) envs_.resize(count, env::KeyDoorEnv(cfg_.task));
        const std::size_t T = static_cast<std::size_t>(cfg_.task.episode_length());
        const std::size_t D = static_cast<std::size_t>(cfg_.task.obs_dim());
        Collected c;
        c.episodes.resize(count);
        c.log_probs.resize(count * T);
        c.values.resize(count * T);
        std::vector<env::Observation> obs(count);
        for (std::size_t k = 0; k < count; ++k) {
            obs[k] = envs_[k].reset(env_rng.next_u64());
            auto& ep = c.episodes[k];
            ep.id = next_id_++;
            ep.obs_dim = D;
            ep.observations.reserve(T * D);
            ep.events.assign(1, "");
        }
        std::unordered_map<std::string, ppo::PolicyEval> cache;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> pending;
            std::vector<std::string> pending_keys;
            std::vector<std::string> keys(count);
            for (std::size_t k = 0; k < count; ++k) {
                keys[k].assign(reinterpret_cast<const char*>(obs[k].data()), D * sizeof(double));
                if (!cache.count(keys[k]) &&
                    std::find(pending_keys.begin(), pending_keys.end(), keys[k]) == pending_keys.end()) {
                    pending_keys.push_back(keys[k]);
                    pending.insert(pending.end(), obs[k].begin(), obs[k].end());
                }
            }
            auto fresh = ppo::evaluate(policy_, pending);
            for (std::size_t u = 0; u < fresh.size(); ++u) cache.emplace(pending_keys[u], std::move(fresh[u]));
            for (std::size_t k = 0; k < count; ++k) {
                const auto a = ppo::act_from(cache.at(keys[k]), act_rng);
                auto& ep = c.episodes[k];
                ep.observations.insert(ep.observations.end(), obs[k].begin(), obs[k].end());
                ep.actions.push_back(a.action);
                c.log_probs[k * T + t] = a.log_prob;
                c.values[k * T + t] = a.value;
                auto res = envs_[k].step(static_cast<env::Action>(a.action));
                ep.rewards.push_back(res.reward);
                if (t + 1 < T) ep.events.push_back(res.event.label());
                obs[k] = std::move(res.observation);
            }
        }
        for (std::size_t k = 0; k < count; ++k) c.episodes[k].success = envs_[k].succeeded();
        return c;
    }

    EpochMetrics run_epoch() {
        const auto start = std::chrono::steady_clock::now();
        const auto& o = cfg_.optim;
        const std::size_t B = o.batch_size;
        const std::size_t T = static_cast<std::size_t>(cfg_.task.episode_length());
        const std::size_t D = static_cast<std::size_t>(cfg_.task.obs_dim());

        // 1. collect
        auto col = collect(B, env_rng_, act_rng_);
        std::vector<double> totals(B);
        std::vector<bool> reached(B);
        for (std::size_t k = 0; k < B; ++k) {
            totals[k] = col.episodes[k].total_reward();
            reached[k] = col.episodes[k].success;
        }
        // 2. classify and buffer
        const auto labels = memory::classify(totals, cfg_.success_criterion());
        std::vector<TrajectoryPtr> batch;
        for (std::size_t k = 0; k < B; ++k) {
            col.episodes[k].success = labels[k];
            batch.push_back(std::make_shared<const Trajectory>(std::move(col.episodes[k])));
        }
        memory::update_buffers(batch, success_, failure_, o.max_successes);

        // 3. intrinsic reward from the current prototypes, detached
        std::vector<double> intrinsic;
        if (o.intrinsic_scale != 0.0)
            intrinsic = conspec_.intrinsic_rewards(batch, cfg_.reward_scheme(), o.intrinsic_scale, o.gamma);

        // 4. PPO on r_norm + shifted intrinsic reward
        ppo::RolloutBatch rb;
        rb.episodes = B;
        rb.steps = T;
        rb.obs_dim = D;
        rb.log_probs = std::move(col.log_probs);
        rb.values = std::move(col.values);
        rb.rewards.resize(B * T);
        double intrinsic_sum = 0.0;
        for (std::size_t k = 0; k < B; ++k) {
            const auto& ep = *batch[k];
            rb.observations.insert(rb.observations.end(), ep.observations.begin(), ep.observations.end());
            rb.actions.insert(rb.actions.end(), ep.actions.begin(), ep.actions.end());
            for (std::size_t t = 0; t < T; ++t) {
                double r = ep.rewards[t] / cfg_.task.terminal_reward;
                // The score of O_{t+1} pays the action that led there.
                if (!intrinsic.empty() && t + 1 < T) {
                    r += intrinsic[k * T + t + 1];
                    intrinsic_sum += intrinsic[k * T + t + 1];
                }
                rb.rewards[k * T + t] = r;
            }
        }
        ppo::compute_advantages(rb, o.gamma, o.gae_lambda);
        ppo::normalize_advantages(rb.advantages);
        ppo::PpoConfig pc{o.clip, o.value_coef, o.entropy_coef, o.max_grad_norm, o.ppo_epochs, o.ppo_minibatches};

        EpochMetrics m;
        m.ppo = ppo::ppo_update(rb, policy_, policy_opt_, pc, update_rng_);

        // 5. contrastive step and bookkeeping
        const auto step = conspec_.train_step(success_, failure_, o.beta);
        m.conspec_trained = step.trained;
        m.conspec_loss = step.loss;

        ++epoch_;
        episodes_ += B;
        double ret = 0.0;
        std::size_t wins = 0;
        for (std::size_t k = 0; k < B; ++k) {
            recent_.push_back(reached[k]);
            if (recent_.size() > kSuccessWindow) recent_.pop_front();
            ret += totals[k];
            wins += reached[k] ? 1 : 0;
        }
        m.epoch = epoch_;
        m.episodes = episodes_;
        m.success_rate = success_rate();
        m.batch_success_rate = static_cast<double>(wins) / static_cast<double>(B);
        m.mean_return = ret / static_cast<double>(B);
        m.mean_intrinsic = intrinsic_sum / static_cast<double>(B);
        m.active = conspec_.recruit_state().active;
        m.frozen = conspec_.freeze_state().frozen_count();
        m.separation.assign(step.separation.begin(), step.separation.begin() + static_cast<std::ptrdiff_t>(m.active));
        for (const auto& ep : batch) {
            std::set<std::string> seen(ep->events.begin(), ep->events.end());
            seen.erase("");
            for (const auto& e : seen) ++m.events[e];
        }
        m.success_buffer = success_.size();
        m.failure_buffer = failure_.size();
        if (!std::isfinite(m.conspec_loss) || !std::isfinite(m.ppo.loss))
            throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch_));
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return m;
    }

    // Fresh episodes from the current policy, labelled by the environment,
    // drawn from a stream that does not disturb training. Stops after
    // `want_successes` successes or `max_batches` batches.
    std::vector<TrajectoryPtr> held_out_successes(std::size_t want_successes, std::size_t max_batches = 64) {
        std::vector<TrajectoryPtr> out;
        for (std::size_t b = 0; b < max_batches && out.size() < want_successes; ++b) {
            auto col = collect(cfg_.optim.batch_size, eval_rng_, eval_rng_);
            for (auto& ep : col.episodes)
                if (ep.success && out.size() < want_successes)
                    out.push_back(std::make_shared<const Trajectory>(std::move(ep)));
        }
        return out;
    }

private:
    ppo::PolicyConfig policy_config() const {
        return {static_cast<std::size_t>(cfg_.task.obs_dim()), cfg_.model.policy_hidden,
                static_cast<std::size_t>(env::kNumActions)};
    }

    ExperimentConfig cfg_;
    Rng root_, policy_rng_, conspec_rng_, env_rng_, act_rng_, update_rng_, eval_rng_;
    std::vector<env::KeyDoorEnv> envs_;
    ppo::PolicyNet policy_;
    ad::Adam policy_opt_;
    core::ConspecModule conspec_;
    memory::FifoBuffer success_, failure_;
    std::deque<bool> recent_;
    std::size_t epoch_ = 0;
    std::size_t episodes_ = 0;
    std::uint64_t next_id_ = 0;
};

// ---------------------------------------------------------------------------
// Full run with artifacts

struct RunSummary {
    std::size_t epochs = 0;
    std::size_t episodes = 0;
    double final_success_rate = 0.0;
    // First episode count at which the trailing rate reached 0.8 / 0.9.
    std::optional<std::size_t> reached_80, reached_90;
    std::vector<core::Separation> separation;       // defining sets, at the end
    std::vector<core::Separation> live_separation;  // live buffers, at the end
    std::vector<bool> frozen;
    std::size_t active = 0;
    std::vector<report::PrototypeSummary> report;
    std::size_t report_successes = 0;
};

inline nlohmann::json to_json(const RunSummary& s) {
    auto seps = [](const std::vector<core::Separation>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& x : v) a.push_back({{"success", x.success_mean}, {"failure", x.failure_mean}, {"valid", x.valid}});
        return a;
    };
    nlohmann::json rep = nlohmann::json::array();
    for (const auto& p : s.report)
        rep.push_back({{"prototype", p.prototype}, {"modal_event", p.modal_event}, {"modal_fraction", p.modal_fraction}});
    return {{"epochs", s.epochs},
            {"episodes", s.episodes},
            {"final_success_rate", s.final_success_rate},
            {"reached_80", s.reached_80 ? nlohmann::json(*s.reached_80) : nlohmann::json(nullptr)},
            {"reached_90", s.reached_90 ? nlohmann::json(*s.reached_90) : nlohmann::json(nullptr)},
            {"separation", seps(s.separation)},
            {"live_separation", seps(s.live_separation)},
            {"frozen", s.frozen},
            {"active", s.active},
            {"report_successes", s.report_successes},
            {"report", rep}};
}

struct TrainOptions {
    bool write_files = true;
    bool final_report = true;
    std::function<void(const EpochMetrics&)> on_epoch;
};

// Runs the configured number of epochs and writes, under cfg.output.dir:
// config.json, metrics.jsonl, metrics.csv, timing.jsonl, conspec.ckpt,
// policy.ckpt, buffers.jsonl, archive.jsonl, report.json, summary.json.
inline RunSummary train(const ExperimentConfig& cfg, const TrainOptions& opt = {}) {
    namespace fs = std::filesystem;
    const fs::path dir = cfg.output.dir;
    std::ofstream metrics, csv, timing;
    if (opt.write_files) {
        fs::create_directories(dir);
        std::ofstream(dir / "config.json") << to_json(cfg).dump(2) << '\n';
        metrics.open(dir / "metrics.jsonl");
        csv.open(dir / "metrics.csv");
        timing.open(dir / "timing.jsonl");
        if (!metrics || !csv || !timing) throw std::runtime_error("cannot write run files under " + dir.string());
        csv << kCsvHeader << '\n';
    }

    Trainer tr(cfg);
    RunSummary sum;
    auto save_checkpoints = [&](const std::string& suffix) {
        checkpoint::save_file((dir / ("conspec" + suffix + ".ckpt")).string(), tr.conspec().net().parameters());
        checkpoint::save_file((dir / ("policy" + suffix + ".ckpt")).string(), tr.policy().parameters());
    };

    for (std::size_t e = 0; e < cfg.optim.epochs; ++e) {
        EpochMetrics m;
        try {
            m = tr.run_epoch();
        } catch (const std::exception& ex) {
            if (opt.write_files) {
                nlohmann::json diag = {{"error", ex.what()},
                                       {"epoch", tr.epoch() + 1},
                                       {"episodes", tr.episodes()},
                                       {"success_buffer", tr.success_buffer().size()},
                                       {"failure_buffer", tr.failure_buffer().size()}};
                std::ofstream(dir / "diagnostic.json") << diag.dump(2) << '\n';
            }
            throw;
        }
        if (opt.write_files) {
            metrics << to_json(m).dump() << '\n';
            csv << csv_row(m) << '\n';
            timing << nlohmann::json{{"epoch", m.epoch}, {"wall_seconds", m.wall_seconds}}.dump() << '\n';
            if (cfg.output.checkpoint_interval && m.epoch % cfg.output.checkpoint_interval == 0)
                save_checkpoints("_e" + std::to_string(m.epoch));
        }
        if (opt.on_epoch) opt.on_epoch(m);
        if (m.episodes >= kSuccessWindow) {
            if (!sum.reached_80 && m.success_rate >= 0.8) sum.reached_80 = m.episodes;
            if (!sum.reached_90 && m.success_rate >= 0.9) sum.reached_90 = m.episodes;
        }
        if (cfg.output.stop_at_success > 0.0 && m.episodes >= kSuccessWindow &&
            m.success_rate >= cfg.output.stop_at_success)
            break;
    }

    sum.epochs = tr.epoch();
    sum.episodes = tr.episodes();
    sum.final_success_rate = tr.success_rate();
    const auto view = tr.conspec().separations(tr.success_buffer(), tr.failure_buffer());
    sum.active = tr.conspec().recruit_state().active;
    sum.separation.assign(view.defining.begin(), view.defining.begin() + static_cast<std::ptrdiff_t>(sum.active));
    sum.live_separation.assign(view.live.begin(), view.live.begin() + static_cast<std::ptrdiff_t>(sum.active));
    sum.frozen = tr.conspec().freeze_state().frozen;

    std::vector<TrajectoryPtr> archive;
    if (opt.final_report && cfg.output.report_episodes > 0 && tr.episodes() > 0)
        archive = tr.held_out_successes(cfg.output.report_episodes);
    const auto rep = report::interpretability_report(tr.conspec().net(), archive, sum.active, cfg.model.temperature,
                                                      &sum.report);
    sum.report_successes = archive.size();

    if (opt.write_files) {
        save_checkpoints("");
        {
            std::ofstream buf(dir / "buffers.jsonl");
            memory::write_jsonl(buf, tr.success_buffer().snapshot());
            memory::write_jsonl(buf, tr.failure_buffer().snapshot());
        }
        {
            std::ofstream arc(dir / "archive.jsonl");
            memory::write_jsonl(arc, archive);
        }
        std::ofstream(dir / "report.json") << rep.dump() << '\n';
        std::ofstream(dir / "summary.json") << to_json(sum).dump(2) << '\n';
    }
    return sum;
}

}  // namespace conspec::trainer
