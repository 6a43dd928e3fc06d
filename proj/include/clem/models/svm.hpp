#pragma once

#include <memory>
#include <span>

#include "clem/models/common.hpp"
#include "clem/narrative.hpp"

namespace clem {

struct SvmConfig {
    double lambda = 1e-4; // L2 strength
    int epochs = 10;
    double lr0 = 0.5; // eta_t = lr0 / (1 + lr0*lambda*t)
    double calibration_fraction = 0.10;
    std::uint64_t seed = 11;
};

/// Objective for the gradient oracle: mean hinge loss over sparse
/// binary rows plus 0.5*lambda*|w|^2 (bias unregularized). Subgradient
/// at margin == 1 takes the hinge-active branch.
double svm_loss_grad(const std::vector<std::vector<std::int32_t>>& rows, const std::vector<int>& y,
                     std::span<const double> w, double bias, double lambda,
                     std::span<double> grad_w, double& grad_bias);

/// Linear SVM over binary code-presence vectors, subgradient descent,
/// with Platt sigmoid calibration fit on an internal held-out fold.
class BowSvmModel final : public Classifier {
  public:
    BowSvmModel(std::shared_ptr<const Vocabulary> vocab, std::vector<double> weights, double bias,
                double platt_a, double platt_b);

    static BowSvmModel train(const std::vector<LabeledExample>& examples,
                             const std::vector<std::size_t>& train_idx,
                             std::shared_ptr<const Vocabulary> vocab, const SvmConfig& config,
                             TrainReport* report = nullptr);

    ModelKind kind() const override { return ModelKind::BowSvm; }
    double predict_proba(const PatientHistory& history) const override;

    double margin(const PatientHistory& history) const;
    const std::vector<double>& weights() const { return weights_; }
    double bias() const { return bias_; }
    double platt_a() const { return platt_a_; }
    double platt_b() const { return platt_b_; }
    const Vocabulary& vocab() const { return *vocab_; }

    /// Distinct vocabulary ids of the history's code tokens (sorted).
    static std::vector<std::int32_t> presence_row(const PatientHistory& history,
                                                  const Vocabulary& vocab);

  private:
    std::shared_ptr<const Vocabulary> vocab_;
    std::vector<double> weights_; // one per vocabulary id
    double bias_;
    double platt_a_, platt_b_; // p = 1 / (1 + exp(a*margin + b))
};

/// Platt scaling: fits (a, b) by Newton iterations on smoothed targets.
std::pair<double, double> fit_platt(std::span<const double> margins, std::span<const int> labels);

} // namespace clem
