#pragma once

#include <cmath>
#include <vector>

#include "conspec/autodiff.hpp"
#include "conspec/rng.hpp"

namespace conspec::nn {

using ad::Tape;
using ad::Var;

// Fully connected layer, weight stored [in x out].
struct Linear {
    Var weight;
    Var bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
        std::vector<double> w(in * out);
        const double stddev = gain / std::sqrt(static_cast<double>(in));
        for (auto& v : w) v = stddev * rng.normal();
        weight = ad::parameter({in, out}, std::move(w));
        bias = ad::parameter({out}, std::vector<double>(out, 0.0));
    }

    std::size_t in_features() const { return weight->shape[0]; }
    std::size_t out_features() const { return weight->shape[1]; }

    Var operator()(Tape& tape, const Var& x) const { return ad::affine(tape, x, weight, bias); }
};

}  // namespace conspec::nn
