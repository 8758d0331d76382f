#pragma once

// Seed sweeps: per-seed epoch rows plus per-epoch median and quartiles.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace conspec::sweep {

// Quantile by linear interpolation between order statistics, position
// q * (n - 1) in the sorted sample.
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct Row {
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::size_t episodes = 0;
    double success_rate = 0.0;
    double mean_return = 0.0;
};

struct Band {
    double median = 0.0, q25 = 0.0, q75 = 0.0;
    std::size_t seeds = 0;
};

// Aggregates each epoch over the seeds that reached it.
inline std::map<std::size_t, Band> aggregate(const std::vector<Row>& rows) {
    std::map<std::size_t, std::vector<double>> by_epoch;
    for (const auto& r : rows) by_epoch[r.epoch].push_back(r.success_rate);
    std::map<std::size_t, Band> out;
    for (const auto& [e, v] : by_epoch) out[e] = {quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75), v.size()};
    return out;
}

inline const char* kHeader = "epoch,seed,episodes,success_rate,mean_return,median_success_rate,q25_success_rate,q75_success_rate,seeds_in_epoch";

inline void write_csv(std::ostream& os, std::vector<Row> rows) {
    const auto agg = aggregate(rows);
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.epoch < b.epoch; });
    auto num = [](double v) { return nlohmann::json(v).dump(); };
    os << kHeader << '\n';
    for (const auto& r : rows) {
        const auto& b = agg.at(r.epoch);
        os << r.epoch << ',' << r.seed << ',' << r.episodes << ',' << num(r.success_rate) << ',' << num(r.mean_return)
           << ',' << num(b.median) << ',' << num(b.q25) << ',' << num(b.q75) << ',' << b.seeds << '\n';
    }
}

}  // namespace conspec::sweep
