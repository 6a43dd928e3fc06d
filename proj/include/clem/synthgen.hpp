#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "clem/claims.hpp"
#include "clem/preprocess.hpp"

namespace clem {

/// A synthetic condition: codes emitted together within claims, plus its
/// contribution to the hospitalization log-odds.
struct ConditionProfile {
    std::string name;
    std::vector<MedicalCode> dx_pool;
    std::vector<MedicalCode> px_pool;
    std::vector<MedicalCode> rx_pool;
    double base_prevalence = 0.1; // in (0,1)
    double log_odds = 0.0;
};

struct GeneratorConfig {
    std::uint64_t seed = 42;
    int n_patients = 50000;          // labeled cohort size
    long n_pretrain_claims = 200000; // pretraining corpus target
    std::vector<ConditionProfile> profiles;
    double intercept = -6.96; // calibrated for a ~15% positive rate
    double age_coeff = 0.15;  // per age-bucket ordinal
    double sex_coeff = 0.3;   // added for male patients
    double noise_code_rate = 0.20;
    int min_claims = 6;
    int max_claims = 22;
    std::string covid_dx = "U071";

    /// 40 profiles (~1,200 distinct codes), 27 of them inside high-risk
    /// prefix ranges of the default risk map.
    static GeneratorConfig defaults();
};

/// Codes that can appear in any claim without implying a condition.
struct NoisePools {
    std::vector<MedicalCode> dx, px, rx;
    /// Covid-era symptom codes emitted only inside the leakage window.
    std::vector<MedicalCode> symptom_dx;
};
const NoisePools& generator_noise_pools();

/// Anchor-free patient histories; deterministic per (seed, patient).
std::vector<PatientHistory> generate_pretrain_corpus(const GeneratorConfig& config);

/// Raw cohort records: anchored, carrying post-anchor claims that encode
/// the drawn label via the derive_label rules (covid hospitalization
/// claim, plain follow-up claim, or silence).
std::vector<PatientHistory> generate_labeled_cohort(const GeneratorConfig& config);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Linear score of the planted model for this history: intercept +
/// sum of active-condition log-odds + demographic effects. Active
/// conditions are recovered from pool membership of the history's codes
/// after leakage filtering. Throws Error when a code belongs to no pool.
double oracle_score(const PatientHistory& history, const GeneratorConfig& config);

/// Exact Bayes probability sigma(oracle_score).
double oracle_probability(const PatientHistory& history, const GeneratorConfig& config);

/// Prebuilt code -> profile index for bulk oracle scoring.
class Oracle {
  public:
    explicit Oracle(const GeneratorConfig& config);
    double score(const PatientHistory& history) const;
    double probability(const PatientHistory& history) const { return sigmoid(score(history)); }

  private:
    const GeneratorConfig& config_;
    // value -> profile index, or -1 for attribution-neutral noise codes
    std::unordered_map<std::string, int> index_[3];
};


} // namespace clem
