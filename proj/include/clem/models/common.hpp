#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "clem/claims.hpp"

namespace clem {

enum class ModelKind : std::uint8_t { RiskLogit, BowSvm, EmbedGbm, MlmTransformer };

const char* model_kind_tag(ModelKind k); // "risk-logit", "bow-svm", "embed-gbm", "mlm"
ModelKind model_kind_from_tag(std::string_view tag);

/// Unified contract over the four model families: leakage-filtered
/// history -> probability of hospitalization. Inference is a pure
/// function of (parameters, input) and thread-safe.
class Classifier {
  public:
    virtual ~Classifier() = default;
    virtual ModelKind kind() const = 0;
    virtual double predict_proba(const PatientHistory& history) const = 0;
};

struct SplitSpec {
    double train_fraction = 0.70;
    bool stratify_by_label = true;
    std::uint64_t seed = 7;
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Disjoint, exhaustive, seed-deterministic partition; stratified splits
/// preserve per-class proportions within one example (per-class train
/// count = round(fraction * class size)).
Split split_train_test(const std::vector<LabeledExample>& examples, const SplitSpec& spec);

struct TrainReport {
    bool converged = true;
    int iterations = 0;
    double final_loss = 0.0;
    std::vector<double> loss_path;
};

} // namespace clem
