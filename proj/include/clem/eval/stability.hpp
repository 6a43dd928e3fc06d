#pragma once

#include <functional>
#include <memory>
#include <unordered_map>

#include "clem/embedding.hpp"
#include "clem/eval/lime.hpp"
#include "clem/models/common.hpp"

namespace clem {

/// Original history plus the nearest-embedding substitution of every
/// code occurrence. Replacements are same-kind; demographics, dates and
/// claim structure are untouched.
struct PerturbedPair {
    PatientHistory original;
    PatientHistory perturbed;
    // distinct original token surface -> replacement surface (self when unchanged)
    std::vector<std::pair<std::string, std::string>> substitutions;
    int n_substituted_occurrences = 0;
    int n_unknown_codes = 0; // not in vocabulary; left unchanged
};

/// Precomputes the nearest same-kind neighbor of every code token in
/// the vocabulary, then substitutes per occurrence.
class Perturber {
  public:
    Perturber(std::shared_ptr<const EmbeddingTable> table, std::shared_ptr<const Vocabulary> vocab,
              int threads = 1);

    PerturbedPair perturb(const PatientHistory& history) const;

    /// Identity perturber (perturbed == original); the stability
    /// protocol's fixed point used by tests.
    static std::function<PerturbedPair(const PatientHistory&)> identity();

  private:
    std::shared_ptr<const EmbeddingTable> table_;
    std::shared_ptr<const Vocabulary> vocab_;
    std::unordered_map<std::int32_t, std::int32_t> neighbor_;
};

struct StabilityConfig {
    long n_samples = 5000; // drawn without replacement; all when larger
    std::uint64_t seed = 31;
    LimeConfig lime;
    int threads = 1;
};

/// Aggregates over original/perturbed pairs: mean |p_orig - p_pert| in
/// percentage points, percent agreement of 0.5-threshold decisions, and
/// the mean squared difference of LIME importances paired through the
/// substitution mapping.
struct StabilityReport {
    double predict_prob_diff_mean = 0.0; // percentage points
    double predict_agreement = 0.0;      // percent
    double var_importance_mse = 0.0;
    long n_pairs = 0;
    long n_lime_pairs = 0; // pairs with at least one code token
    bool used_entire_set = false;
    std::uint64_t seed = 0;
};

StabilityReport stability_eval(const Classifier& classifier,
                               const std::vector<PatientHistory>& test_histories,
                               const std::function<PerturbedPair(const PatientHistory&)>& perturb,
                               const StabilityConfig& config);

inline StabilityReport stability_eval(const Classifier& classifier,
                                      const std::vector<PatientHistory>& test_histories,
                                      const Perturber& perturber, const StabilityConfig& config) {
    return stability_eval(classifier, test_histories,
                          [&](const PatientHistory& h) { return perturber.perturb(h); }, config);
}

} // namespace clem
