#pragma once

// Interpretability report: for every prototype and successful episode, the
// timestep that matched the prototype best and what happened there.

#include <algorithm>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "conspec/conspec.hpp"
#include "conspec/memory.hpp"

namespace conspec::report {

// "key_2" -> "key_2"; "door_1" -> "door_1"; "final_door"; anything else "other".
inline std::string event_class(const std::string& label) {
    if (label.rfind("key_", 0) == 0 || label.rfind("door_", 0) == 0 || label == "final_door") return label;
    return "other";
}

struct PrototypeSummary {
    std::size_t prototype = 0;
    std::size_t episodes = 0;
    std::map<std::string, std::size_t> counts;
    std::string modal_event;
    double modal_fraction = 0.0;
};

inline nlohmann::json interpretability_report(const core::ConspecNet& net, std::span<const memory::TrajectoryPtr> archive,
                                              std::size_t active_prototypes, double temperature = 1.0,
                                              std::vector<PrototypeSummary>* summaries = nullptr) {
    const std::size_t H = std::min(active_prototypes, net.prototype_count());
    std::map<std::size_t, std::vector<memory::TrajectoryPtr>> by_length;
    for (const auto& t : archive) {
        if (t->obs_dim != net.obs_dim())
            throw ad::ShapeError("report: archive observation width " + std::to_string(t->obs_dim) +
                                 " does not match checkpoint input " + std::to_string(net.obs_dim()));
        if (t->success && t->length() > 0) by_length[t->length()].push_back(t);
    }

    nlohmann::json entries = nlohmann::json::array();
    std::vector<PrototypeSummary> summary(H);
    for (std::size_t i = 0; i < H; ++i) summary[i].prototype = i;
    for (const auto& [len, eps] : by_length) {
        const auto s = core::compute_scores(net, eps, temperature);
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t k = 0; k < eps.size(); ++k) {
                const auto& ep = *eps[k];
                const std::size_t t = s.argmax_over_time(i, k);
                const std::string label = ep.events.empty() ? "" : ep.events[t];
                auto o = ep.observation(t);
                entries.push_back({{"prototype", i},
                                   {"episode", ep.id},
                                   {"timestep", t},
                                   {"score", s.at(i, k, t)},
                                   {"event", label},
                                   {"observation", std::vector<double>(o.begin(), o.end())}});
                ++summary[i].episodes;
                ++summary[i].counts[event_class(label)];
            }
    }

    nlohmann::json protos = nlohmann::json::array();
    for (auto& p : summary) {
        for (const auto& [ev, n] : p.counts)
            if (n > 0 && static_cast<double>(n) / static_cast<double>(p.episodes) > p.modal_fraction) {
                p.modal_fraction = static_cast<double>(n) / static_cast<double>(p.episodes);
                p.modal_event = ev;
            }
        protos.push_back({{"prototype", p.prototype},
                          {"episodes", p.episodes},
                          {"modal_event", p.modal_event},
                          {"modal_fraction", p.modal_fraction},
                          {"event_counts", p.counts}});
    }
    if (summaries) *summaries = summary;

    std::size_t successes = 0;
    for (const auto& [len, eps] : by_length) successes += eps.size();
    return {{"successful_episodes", successes}, {"prototypes", protos}, {"entries", entries}};
}

}  // namespace conspec::report
