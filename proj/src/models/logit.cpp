#include "clem/models/logit.hpp"

#include <algorithm>
#include <cmath>

#include "clem/error.hpp"
#include "clem/synthgen.hpp"

namespace clem {

double logit_loss_grad(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                       std::span<const double> w, double bias, double l2, std::span<double> grad_w,
                       double& grad_bias) {
    const std::size_t n = X.size();
    const std::size_t d = w.size();
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    grad_bias = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& x = X[i];
        double z = bias;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
        double p = sigmoid(z);
        // numerically stable BCE: log(1+exp(-|z|)) + max(z,0) - z*y
        loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * y[i];
        double g = p - y[i];
        for (std::size_t j = 0; j < d; ++j) grad_w[j] += g * x[j];
        grad_bias += g;
    }
    const double inv = 1.0 / double(n);
    loss *= inv;
    grad_bias *= inv;
    for (std::size_t j = 0; j < d; ++j) {
        grad_w[j] = grad_w[j] * inv + l2 * w[j];
        loss += 0.5 * l2 * w[j] * w[j];
    }
    return loss;
}

RiskLogitModel::RiskLogitModel(RiskFactorMap map, AgeBucketTable buckets,
                               std::vector<double> weights, double bias)
    : map_(std::move(map)), buckets_(std::move(buckets)), weights_(std::move(weights)),
      bias_(bias) {}

double RiskLogitModel::predict_proba(const PatientHistory& history) const {
    auto x = map_risk_factors(history, map_, buckets_);
    if (x.size() != weights_.size()) throw Error("risk feature length mismatch");
    double z = bias_;
    for (std::size_t j = 0; j < x.size(); ++j) z += weights_[j] * x[j];
    return sigmoid(z);
}

RiskLogitModel RiskLogitModel::train(const std::vector<LabeledExample>& examples,
                                     const std::vector<std::size_t>& train_idx,
                                     const RiskFactorMap& map, const AgeBucketTable& buckets,
                                     const LogitConfig& cfg, TrainReport* report) {
    if (train_idx.empty()) throw Error("risk-logit: empty training set");
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    X.reserve(train_idx.size());
    y.reserve(train_idx.size());
    for (std::size_t i : train_idx) {
        X.push_back(map_risk_factors(examples[i].history, map, buckets));
        y.push_back(examples[i].label == Label::Hospitalized ? 1 : 0);
    }
    const std::size_t d = X.front().size();

    std::vector<double> w(d, 0.0);
    double bias = 0.0;
    std::vector<double> gw(d), gw_try(d);
    double gb = 0.0, gb_try = 0.0;
    double step = 1.0;
    double loss = logit_loss_grad(X, y, w, bias, cfg.l2, gw, gb);

    TrainReport rep;
    bool converged = false;
    int it = 0;
    std::vector<double> w_try(d);
    for (; it < cfg.max_iter; ++it) {
        double gmax = std::abs(gb);
        for (double g : gw) gmax = std::max(gmax, std::abs(g));
        if (gmax < cfg.tol) {
            converged = true;
            break;
        }
        // backtracking line search on the full-batch objective
        bool accepted = false;
        for (int bt = 0; bt < 40; ++bt) {
            for (std::size_t j = 0; j < d; ++j) w_try[j] = w[j] - step * gw[j];
            double b_try = bias - step * gb;
            double loss_try = logit_loss_grad(X, y, w_try, b_try, cfg.l2, gw_try, gb_try);
            if (loss_try < loss) {
                w.swap(w_try);
                bias = b_try;
                loss = loss_try;
                gw.swap(gw_try);
                gb = gb_try;
                step *= 1.2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break; // flat to machine precision
        rep.loss_path.push_back(loss);
    }
    rep.converged = converged;
    rep.iterations = it;
    rep.final_loss = loss;
    if (report) *report = rep;

    // snap to f32 so the serialized artifact predicts identically
    for (auto& v : w) v = double(float(v));
    bias = double(float(bias));
    return RiskLogitModel(map, buckets, std::move(w), bias);
}

} // namespace clem
