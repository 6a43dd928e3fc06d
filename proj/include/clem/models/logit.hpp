#pragma once

#include <span>

#include "clem/models/common.hpp"
#include "clem/preprocess.hpp"

namespace clem {

struct LogitConfig {
    double l2 = 1e-4; // on weights, not the intercept
    int max_iter = 500;
    double tol = 1e-8; // max-norm of the gradient
};

/// Mean logistic NLL + 0.5*l2*|w|^2 over a dense feature matrix, with
/// analytic gradients (used by training and by the gradient oracle).
double logit_loss_grad(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                       std::span<const double> w, double bias, double l2, std::span<double> grad_w,
                       double& grad_bias);

/// Logistic regression over the 25 risk factors plus age bucket ordinal
/// and sex, fit by full-batch gradient descent (backtracking line
/// search) with an L2 penalty.
class RiskLogitModel final : public Classifier {
  public:
    RiskLogitModel(RiskFactorMap map, AgeBucketTable buckets, std::vector<double> weights,
                   double bias);

    static RiskLogitModel train(const std::vector<LabeledExample>& examples,
                                const std::vector<std::size_t>& train_idx, const RiskFactorMap& map,
                                const AgeBucketTable& buckets, const LogitConfig& config,
                                TrainReport* report = nullptr);

    ModelKind kind() const override { return ModelKind::RiskLogit; }
    double predict_proba(const PatientHistory& history) const override;

    const std::vector<double>& weights() const { return weights_; }
    double bias() const { return bias_; }
    const RiskFactorMap& risk_map() const { return map_; }
    const AgeBucketTable& buckets() const { return buckets_; }

  private:
    RiskFactorMap map_;
    AgeBucketTable buckets_;
    std::vector<double> weights_;
    double bias_;
};

} // namespace clem
