#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clem/models/common.hpp"

namespace clem {

struct LimeConfig {
    int n_samples = 1000;
    double kernel_width_scale = 0.25; // width = scale * sqrt(#features)
    double ridge_lambda = 1.0;
    double drop_probability = 0.5; // per token, per sample
};

/// Local surrogate explanation: importance per distinct code token of
/// the explained history, plus fit diagnostics.
struct Explanation {
    std::vector<std::pair<std::string, double>> importance; // sorted by token surface
    double r2 = 0.0;
    double kernel_width = 0.0;
    int n_samples = 0;
    std::uint64_t seed = 0;

    double importance_of(const std::string& surface) const;
};

/// Interpretable representation: binary presence of each distinct code
/// token. Samples drop random token subsets, the classifier re-scores
/// each modified history, and a kernel-weighted ridge regression yields
/// per-token importances. Throws Error when the history has no code
/// tokens.
Explanation lime_explain(const Classifier& classifier, const PatientHistory& history,
                         const LimeConfig& config, std::uint64_t seed);

} // namespace clem
