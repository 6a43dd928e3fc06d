#pragma once

#include <string>
#include <vector>

#include "clem/embedding.hpp"
#include "clem/models/common.hpp"
#include "clem/preprocess.hpp"

namespace clem {

struct SanityConfig {
    int n_variations = 30;
    std::uint64_t seed = 47;
};

/// Scores each model on synthetic histories stuffed with codes from
/// every high-risk prefix range (several random variations) and on
/// matched histories carrying only codes outside all risk ranges.
struct SanityResult {
    struct PerModel {
        std::string model;
        double mean_prob_high_risk = 0.0;
        double mean_prob_no_risk = 0.0;
        double fraction_high_predicted_positive = 0.0; // p >= 0.5 on high-risk inputs
    };
    std::vector<PerModel> models;
    std::vector<std::string> risks_without_codes; // ranges with no vocabulary token
    int n_variations = 0;
};

SanityResult highrisk_sanity_check(const std::vector<const Classifier*>& classifiers,
                                   const RiskFactorMap& risk_map, const EmbeddingTable& table,
                                   const Vocabulary& vocab, const SanityConfig& config,
                                   const AgeBucketTable& buckets = AgeBucketTable::defaults());

std::string sanity_to_text(const SanityResult& r);

} // namespace clem
