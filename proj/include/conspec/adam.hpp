#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "conspec/autodiff.hpp"

namespace conspec::ad {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-5;
};

// Adam with bias correction. Moments are kept per parameter tensor, in the
// order the parameters were registered.
class Adam {
public:
    Adam(std::vector<Var> params, AdamConfig config) : params_(std::move(params)), config_(config) {
        for (const auto& p : params_) {
            first_.emplace_back(p->size(), 0.0);
            second_.emplace_back(p->size(), 0.0);
        }
    }

    // Applies one update and clears the gradients. Every registered parameter
    // must carry a gradient.
    void step() {
        for (std::size_t k = 0; k < params_.size(); ++k) {
            if (!params_[k]->has_grad()) {
                throw std::logic_error("adam: parameter " + std::to_string(k) + " of shape " +
                                       shape_str(params_[k]->shape) + " has no gradient");
            }
        }
        ++step_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = *params_[k];
            auto& m = first_[k];
            auto& v = second_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
                v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                p.value[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
            p.zero_grad();
        }
    }

    std::uint64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<Var>& params() const { return params_; }
    const std::vector<double>& first_moment(std::size_t k) const { return first_[k]; }
    const std::vector<double>& second_moment(std::size_t k) const { return second_[k]; }

private:
    std::vector<Var> params_;
    AdamConfig config_;
    std::vector<std::vector<double>> first_, second_;
    std::uint64_t step_ = 0;
};

}  // namespace conspec::ad
