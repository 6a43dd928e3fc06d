#pragma once

#include <optional>
#include <span>
#include <string>

namespace clem {

/// Threshold-0.5 confusion counts and derived percentages on the
/// positive (Hospitalized) class. Undefined ratios (no predicted
/// positives, or no actual positives) are reported as absent rather
/// than zero.
struct MetricsReport {
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> precision; // percent
    std::optional<double> recall;    // percent
    std::optional<double> f1;        // percent
    double accuracy = 0.0;           // percent

    long long n() const { return tp + fp + tn + fn; }
};

/// p >= 0.5 predicts the positive class.
MetricsReport compute_metrics(std::span<const double> probabilities, std::span<const int> labels);

/// Rank-based AUC (Mann-Whitney; tied scores get averaged ranks).
double auc_score(std::span<const double> probabilities, std::span<const int> labels);

std::string metrics_to_text(const MetricsReport& r, const std::string& name);

} // namespace clem
