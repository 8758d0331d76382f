#pragma once

// Trajectory storage: FIFO success / failure buffers and the success
// classification applied to each freshly collected minibatch.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <fstream>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace conspec::memory {

struct Trajectory {
    std::uint64_t id = 0;
    std::size_t obs_dim = 0;
    std::vector<double> observations;  // [T x obs_dim], O_1..O_T
    std::vector<int> actions;          // a_1..a_T
    std::vector<double> rewards;       // environment rewards r_1..r_T
    // Ground-truth annotation per observation: what became visible in O_t
    // ("key_1", "door_2", "final_door" or empty).
    std::vector<std::string> events;
    bool success = false;

    std::size_t length() const { return actions.size(); }

    std::span<const double> observation(std::size_t t) const {
        return {observations.data() + t * obs_dim, obs_dim};
    }

    double total_reward() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

    void validate() const {
        const std::size_t T = actions.size();
        if (rewards.size() != T || observations.size() != T * obs_dim ||
            (!events.empty() && events.size() != T)) {
            throw std::invalid_argument("trajectory " + std::to_string(id) + ": sequence lengths differ");
        }
    }
};

using TrajectoryPtr = std::shared_ptr<const Trajectory>;

class FifoBuffer {
public:
    explicit FifoBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("FifoBuffer: capacity must be positive");
    }

    // Appends, evicting the oldest entry when full.
    void push(TrajectoryPtr t) {
        if (items_.size() == capacity_) items_.pop_front();
        items_.push_back(std::move(t));
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return items_.empty(); }
    const TrajectoryPtr& operator[](std::size_t i) const { return items_[i]; }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    bool contains(std::uint64_t id) const {
        return std::any_of(items_.begin(), items_.end(), [id](const auto& t) { return t->id == id; });
    }

    std::vector<TrajectoryPtr> snapshot() const { return {items_.begin(), items_.end()}; }

private:
    std::size_t capacity_;
    std::deque<TrajectoryPtr> items_;
};

struct SuccessCriterion {
    enum class Mode { sparse, top_k };
    Mode mode = Mode::sparse;
    std::size_t k = 1;
};

// sparse: success iff the episode's total reward is positive.
// top_k : the k highest totals in the batch; ties go to the earlier index.
inline std::vector<bool> classify(std::span<const double> totals, const SuccessCriterion& criterion) {
    std::vector<bool> labels(totals.size(), false);
    if (criterion.mode == SuccessCriterion::Mode::sparse) {
        for (std::size_t i = 0; i < totals.size(); ++i) labels[i] = totals[i] > 0.0;
        return labels;
    }
    if (criterion.k > totals.size()) {
        throw std::invalid_argument("classify: top-k with k=" + std::to_string(criterion.k) +
                                    " exceeds batch size " + std::to_string(totals.size()));
    }
    std::vector<std::size_t> order(totals.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return totals[a] > totals[b]; });
    for (std::size_t j = 0; j < criterion.k; ++j) labels[order[j]] = true;
    return labels;
}

inline std::vector<bool> classify(std::span<const Trajectory> batch, const SuccessCriterion& criterion) {
    std::vector<double> totals;
    totals.reserve(batch.size());
    for (const auto& t : batch) totals.push_back(t.total_reward());
    return classify(totals, criterion);
}

struct IntakeResult {
    std::size_t successes_added = 0;
    std::size_t failures_added = 0;
    std::size_t successes_dropped = 0;
};

// Successes enter `success` in batch order up to `max_successes`; the rest
// are dropped. Every failure enters `failure`.
inline IntakeResult update_buffers(std::span<const TrajectoryPtr> batch, FifoBuffer& success,
                                   FifoBuffer& failure, std::size_t max_successes = 2) {
    IntakeResult res;
    for (const auto& t : batch) {
        if (t->success) {
            if (res.successes_added < max_successes) {
                success.push(t);
                ++res.successes_added;
            } else {
                ++res.successes_dropped;
            }
        } else {
            failure.push(t);
            ++res.failures_added;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// JSONL archive: one trajectory per line.

inline nlohmann::json to_json(const Trajectory& t) {
    nlohmann::json obs = nlohmann::json::array();
    for (std::size_t s = 0; s < t.length(); ++s) {
        auto o = t.observation(s);
        obs.push_back(std::vector<double>(o.begin(), o.end()));
    }
    return {{"id", t.id},          {"success", t.success}, {"obs_dim", t.obs_dim},
            {"actions", t.actions}, {"rewards", t.rewards}, {"events", t.events},
            {"observations", std::move(obs)}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
    Trajectory t;
    t.id = j.at("id").get<std::uint64_t>();
    t.success = j.at("success").get<bool>();
    t.obs_dim = j.at("obs_dim").get<std::size_t>();
    t.actions = j.at("actions").get<std::vector<int>>();
    t.rewards = j.at("rewards").get<std::vector<double>>();
    if (j.contains("events")) t.events = j.at("events").get<std::vector<std::string>>();
    for (const auto& row : j.at("observations")) {
        auto v = row.get<std::vector<double>>();
        if (v.size() != t.obs_dim) throw std::invalid_argument("archive: observation width mismatch");
        t.observations.insert(t.observations.end(), v.begin(), v.end());
    }
    t.validate();
    return t;
}

inline void write_jsonl(std::ostream& os, std::span<const TrajectoryPtr> trajectories) {
    for (const auto& t : trajectories) os << to_json(*t).dump() << '\n';
}

inline std::vector<TrajectoryPtr> read_jsonl(std::istream& is) {
    std::vector<TrajectoryPtr> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(std::make_shared<const Trajectory>(trajectory_from_json(nlohmann::json::parse(line))));
        } catch (const std::exception& e) {
            throw std::runtime_error("archive line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<TrajectoryPtr> read_jsonl_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open archive " + path);
    return read_jsonl(in);
}

}  // namespace conspec::memory
