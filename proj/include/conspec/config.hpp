#pragma once

// Experiment configuration: JSON with a schema version and four blocks
// (task, model, optim, output). Unknown keys and out-of-range values are
// rejected with the offending field named.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "conspec/conspec.hpp"
#include "conspec/env.hpp"
#include "conspec/memory.hpp"

namespace conspec {

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    std::size_t prototypes = 8;
    std::size_t encoder_hidden = 64;
    std::size_t latent = 32;
    std::size_t projection_hidden = 64;
    std::size_t projection_out = 32;
    std::size_t policy_hidden = 64;
    double temperature = 1.0;
    std::string scheme = "eq2";            // eq2 | eq3
    std::string diversity = "orthogonality";  // orthogonality | entropy
    bool freeze = true;
    bool recruit = false;
    std::size_t initial_active = 3;
    double threshold = 0.6;
    int freeze_steps = 25;
    std::size_t reward_window = 7;
    std::string reward_prototypes = "all";  // all | separated
};

struct OptimConfig {
    double policy_lr = 2e-4;
    double conspec_lr = 2e-3;
    double adam_eps = 1e-5;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip = 0.08;
    double value_coef = 0.5;
    double entropy_coef = 0.02;
    double max_grad_norm = 0.5;
    std::size_t ppo_epochs = 1;
    std::size_t ppo_minibatches = 1;
    std::size_t batch_size = 16;
    std::size_t epochs = 125;
    double intrinsic_scale = 0.2;  // lambda
    double alpha = 0.2;
    double beta = 1.0;
    std::string success = "sparse";  // sparse | top_k
    std::size_t top_k = 1;
    std::size_t buffer_capacity = 16;
    std::size_t max_successes = 2;
};

struct OutputConfig {
    std::string dir = "runs/default";
    std::size_t checkpoint_interval = 0;  // epochs; 0 = final only
    // Stop once the trailing success rate reaches this value (0 disables).
    double stop_at_success = 0.0;
    std::size_t report_episodes = 32;  // held-out successes for the report
};

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    std::string task_kind = "multi_key";
    env::GridTask task;
    std::uint64_t seed = 0;
    ModelConfig model;
    OptimConfig optim;
    OutputConfig output;

    core::ConspecConfig conspec_config() const {
        core::ConspecConfig c;
        c.obs_dim = static_cast<std::size_t>(task.obs_dim());
        c.encoder_hidden = model.encoder_hidden;
        c.latent = model.latent;
        c.projection_hidden = model.projection_hidden;
        c.projection_out = model.projection_out;
        c.prototypes = model.prototypes;
        c.temperature = model.temperature;
        c.threshold = model.threshold;
        c.reward_window = model.reward_window;
        c.freeze_steps = model.freeze_steps;
        c.freeze = model.freeze;
        c.recruit = model.recruit;
        c.initial_active = model.initial_active;
        c.diversity = model.diversity == "entropy" ? core::Diversity::entropy : core::Diversity::orthogonality;
        c.alpha = optim.alpha;
        c.reward_separated_only = model.reward_prototypes == "separated";
        return c;
    }

    core::RewardScheme reward_scheme() const {
        return model.scheme == "eq3" ? core::RewardScheme::potential : core::RewardScheme::windowed;
    }

    memory::SuccessCriterion success_criterion() const {
        memory::SuccessCriterion c;
        c.mode = optim.success == "top_k" ? memory::SuccessCriterion::Mode::top_k : memory::SuccessCriterion::Mode::sparse;
        c.k = optim.top_k;
        return c;
    }
};

namespace detail {

using nlohmann::json;

// Reads fields out of one JSON object, remembering which keys were consumed.
class BlockReader {
public:
    BlockReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) throw ConfigError(prefix_ + ": expected an object");
    }

    std::string name(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    template <class T>
    void get(const std::string& key, T& out) {
        used_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(name(key) + ": wrong type");
        }
    }

    void get_size(const std::string& key, std::size_t& out, std::size_t lo, std::size_t hi) {
        used_.insert(key);
        if (!j_.contains(key)) return check(key, out, lo, hi);
        const auto& v = j_.at(key);
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
            throw ConfigError(name(key) + ": expected a non-negative integer");
        out = v.get<std::size_t>();
        check(key, out, lo, hi);
    }

    void get_int(const std::string& key, int& out, int lo, int hi) {
        used_.insert(key);
        if (j_.contains(key)) {
            if (!j_.at(key).is_number_integer()) throw ConfigError(name(key) + ": expected an integer");
            out = j_.at(key).get<int>();
        }
        if (out < lo || out > hi)
            throw ConfigError(name(key) + ": " + std::to_string(out) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
    }

    void get_real(const std::string& key, double& out, double lo, double hi, bool open_lo = false,
                  bool open_hi = false) {
        used_.insert(key);
        if (j_.contains(key)) {
            if (!j_.at(key).is_number()) throw ConfigError(name(key) + ": expected a number");
            out = j_.at(key).get<double>();
        }
        const bool bad = !std::isfinite(out) || (open_lo ? out <= lo : out < lo) || (open_hi ? out >= hi : out > hi);
        if (bad) {
            std::ostringstream os;
            os << name(key) << ": " << out << " outside " << (open_lo ? "(" : "[") << lo << ", " << hi
               << (open_hi ? ")" : "]");
            throw ConfigError(os.str());
        }
    }

    void get_choice(const std::string& key, std::string& out, std::initializer_list<const char*> allowed) {
        get(key, out);
        for (const char* a : allowed)
            if (out == a) return;
        std::string list;
        for (const char* a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
        throw ConfigError(name(key) + ": '" + out + "' is not one of " + list);
    }

    const json* child(const std::string& key) {
        used_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void reject_unknown() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw ConfigError(name(it.key()) + ": unknown key");
    }

private:
    template <class T>
    void check(const std::string& key, T v, T lo, T hi) const {
        if (v < lo || v > hi)
            throw ConfigError(name(key) + ": " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
    }

    const json& j_;
    std::string prefix_;
    std::set<std::string> used_;
};

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    using detail::BlockReader;
    ExperimentConfig c;
    BlockReader root(j, "");
    root.get_int("schema_version", c.schema_version, kSchemaVersion, kSchemaVersion);
    {
        std::uint64_t seed = c.seed;
        root.get("seed", seed);
        c.seed = seed;
    }

    if (const auto* t = root.child("task")) {
        BlockReader r(*t, "task");
        auto& k = c.task;
        r.get_choice("kind", c.task_kind, {"multi_key"});
        r.get_int("rows", k.rows, 3, 16);
        r.get_int("cols", k.cols, 3, 16);
        r.get_int("keys", k.keys, 1, 8);
        r.get_int("key_steps", k.key_steps, 1, 1000);
        r.get_int("wait_steps", k.wait_steps, 0, 1000);
        r.get_int("final_steps", k.final_steps, 1, 1000);
        r.get("conjunctive", k.conjunctive);
        r.get("key_rooms", k.key_rooms);
        r.get_real("terminal_reward", k.terminal_reward, 0.0, 1e6, true);
        r.get_int("key_start_distance", k.key_start_distance, 0, 100);
        std::uint64_t ls = k.layout_seed;
        r.get("layout_seed", ls);
        k.layout_seed = ls;
        r.reject_unknown();
    }
    try {
        c.task.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    if (const auto* m = root.child("model")) {
        BlockReader r(*m, "model");
        auto& k = c.model;
        r.get_size("prototypes", k.prototypes, 1, 64);
        r.get_size("encoder_hidden", k.encoder_hidden, 1, 1024);
        r.get_size("latent", k.latent, 1, 1024);
        r.get_size("projection_hidden", k.projection_hidden, 1, 1024);
        r.get_size("projection_out", k.projection_out, 1, 1024);
        r.get_size("policy_hidden", k.policy_hidden, 1, 1024);
        r.get_real("temperature", k.temperature, 0.0, 1e3, true);
        r.get_choice("scheme", k.scheme, {"eq2", "eq3"});
        r.get_choice("diversity", k.diversity, {"orthogonality", "entropy"});
        r.get("freeze", k.freeze);
        r.get("recruit", k.recruit);
        r.get_size("initial_active", k.initial_active, 1, 64);
        r.get_real("threshold", k.threshold, 0.0, 1.0);
        r.get_int("freeze_steps", k.freeze_steps, 1, 100000);
        r.get_size("reward_window", k.reward_window, 1, 1000);
        r.get_choice("reward_prototypes", k.reward_prototypes, {"all", "separated"});
        r.reject_unknown();
    }

    if (const auto* o = root.child("optim")) {
        BlockReader r(*o, "optim");
        auto& k = c.optim;
        r.get_real("policy_lr", k.policy_lr, 0.0, 1.0, true);
        r.get_real("conspec_lr", k.conspec_lr, 0.0, 1.0, true);
        r.get_real("adam_eps", k.adam_eps, 0.0, 1.0, true);
        r.get_real("gamma", k.gamma, 0.0, 1.0, false, true);
        r.get_real("gae_lambda", k.gae_lambda, 0.0, 1.0);
        r.get_real("clip", k.clip, 0.0, 1.0, true);
        r.get_real("value_coef", k.value_coef, 0.0, 100.0);
        r.get_real("entropy_coef", k.entropy_coef, 0.0, 100.0);
        r.get_real("max_grad_norm", k.max_grad_norm, 0.0, 1e6, true);
        r.get_size("ppo_epochs", k.ppo_epochs, 1, 100);
        r.get_size("ppo_minibatches", k.ppo_minibatches, 1, 1024);
        r.get_size("batch_size", k.batch_size, 1, 4096);
        r.get_size("epochs", k.epochs, 0, 10000000);
        r.get_real("intrinsic_scale", k.intrinsic_scale, 0.0, 100.0);
        r.get_real("alpha", k.alpha, 0.0, 100.0);
        r.get_real("beta", k.beta, 0.0, 100.0);
        r.get_choice("success", k.success, {"sparse", "top_k"});
        r.get_size("top_k", k.top_k, 1, 4096);
        r.get_size("buffer_capacity", k.buffer_capacity, 1, 4096);
        r.get_size("max_successes", k.max_successes, 0, 4096);
        r.reject_unknown();
        if (k.success == "top_k" && k.top_k > k.batch_size)
            throw ConfigError("optim.top_k: exceeds optim.batch_size");
    }
    if (c.model.initial_active > c.model.prototypes)
        throw ConfigError("model.initial_active: exceeds model.prototypes");

    if (const auto* o = root.child("output")) {
        BlockReader r(*o, "output");
        auto& k = c.output;
        r.get("dir", k.dir);
        r.get_size("checkpoint_interval", k.checkpoint_interval, 0, 10000000);
        r.get_real("stop_at_success", k.stop_at_success, 0.0, 1.0);
        r.get_size("report_episodes", k.report_episodes, 0, 100000);
        r.reject_unknown();
    }
    root.reject_unknown();
    return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
    const auto& t = c.task;
    const auto& m = c.model;
    const auto& o = c.optim;
    return {
        {"schema_version", c.schema_version},
        {"seed", c.seed},
        {"task",
         {{"kind", c.task_kind},
          {"rows", t.rows},
          {"cols", t.cols},
          {"keys", t.keys},
          {"key_steps", t.key_steps},
          {"wait_steps", t.wait_steps},
          {"final_steps", t.final_steps},
          {"conjunctive", t.conjunctive},
          {"key_rooms", t.key_rooms},
          {"terminal_reward", t.terminal_reward},
          {"key_start_distance", t.key_start_distance},
          {"layout_seed", t.layout_seed}}},
        {"model",
         {{"prototypes", m.prototypes},
          {"encoder_hidden", m.encoder_hidden},
          {"latent", m.latent},
          {"projection_hidden", m.projection_hidden},
          {"projection_out", m.projection_out},
          {"policy_hidden", m.policy_hidden},
          {"temperature", m.temperature},
          {"scheme", m.scheme},
          {"diversity", m.diversity},
          {"freeze", m.freeze},
          {"recruit", m.recruit},
          {"initial_active", m.initial_active},
          {"threshold", m.threshold},
          {"freeze_steps", m.freeze_steps},
          {"reward_window", m.reward_window},
          {"reward_prototypes", m.reward_prototypes}}},
        {"optim",
         {{"policy_lr", o.policy_lr},
          {"conspec_lr", o.conspec_lr},
          {"adam_eps", o.adam_eps},
          {"gamma", o.gamma},
          {"gae_lambda", o.gae_lambda},
          {"clip", o.clip},
          {"value_coef", o.value_coef},
          {"entropy_coef", o.entropy_coef},
          {"max_grad_norm", o.max_grad_norm},
          {"ppo_epochs", o.ppo_epochs},
          {"ppo_minibatches", o.ppo_minibatches},
          {"batch_size", o.batch_size},
          {"epochs", o.epochs},
          {"intrinsic_scale", o.intrinsic_scale},
          {"alpha", o.alpha},
          {"beta", o.beta},
          {"success", o.success},
          {"top_k", o.top_k},
          {"buffer_capacity", o.buffer_capacity},
          {"max_successes", o.max_successes}}},
        {"output",
         {{"dir", c.output.dir},
          {"checkpoint_interval", c.output.checkpoint_interval},
          {"stop_at_success", c.output.stop_at_success},
          {"report_episodes", c.output.report_episodes}}},
    };
}

inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: malformed JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace conspec
