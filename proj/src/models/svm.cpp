#include "clem/models/svm.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "clem/error.hpp"
#include "clem/rng.hpp"

namespace clem {

double svm_loss_grad(const std::vector<std::vector<std::int32_t>>& rows, const std::vector<int>& y,
                     std::span<const double> w, double bias, double lambda,
                     std::span<double> grad_w, double& grad_bias) {
    const std::size_t n = rows.size();
    for (std::size_t j = 0; j < w.size(); ++j) grad_w[j] = lambda * w[j];
    grad_bias = 0.0;
    double loss = 0.0;
    const double inv = 1.0 / double(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double yi = y[i] == 1 ? 1.0 : -1.0;
        double z = bias;
        for (std::int32_t j : rows[i]) z += w[static_cast<std::size_t>(j)];
        const double m = yi * z;
        if (m < 1.0) {
            loss += (1.0 - m) * inv;
            for (std::int32_t j : rows[i]) grad_w[static_cast<std::size_t>(j)] -= yi * inv;
            grad_bias -= yi * inv;
        }
    }
    double reg = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) reg += w[j] * w[j];
    return loss + 0.5 * lambda * reg;
}

std::vector<std::int32_t> BowSvmModel::presence_row(const PatientHistory& history,
                                                    const Vocabulary& vocab) {
    std::set<std::int32_t> ids;
    for (const auto& claim : history.claims) {
        for (const auto& c : claim.dx) ids.insert(vocab.id(code_token(c)));
        for (const auto& c : claim.px) ids.insert(vocab.id(code_token(c)));
        for (const auto& c : claim.rx) ids.insert(vocab.id(code_token(c)));
    }
    return {ids.begin(), ids.end()};
}

BowSvmModel::BowSvmModel(std::shared_ptr<const Vocabulary> vocab, std::vector<double> weights,
                         double bias, double platt_a, double platt_b)
    : vocab_(std::move(vocab)), weights_(std::move(weights)), bias_(bias), platt_a_(platt_a),
      platt_b_(platt_b) {}

double BowSvmModel::margin(const PatientHistory& history) const {
    double z = bias_;
    for (std::int32_t j : presence_row(history, *vocab_)) z += weights_[static_cast<std::size_t>(j)];
    return z;
}

double BowSvmModel::predict_proba(const PatientHistory& history) const {
    return 1.0 / (1.0 + std::exp(platt_a_ * margin(history) + platt_b_));
}

std::pair<double, double> fit_platt(std::span<const double> margins, std::span<const int> labels) {
    // Newton with backtracking on the smoothed-target cross entropy
    const std::size_t n = margins.size();
    double n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) throw Error("platt calibration needs both classes");
    const double t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    const double t_neg = 1.0 / (n_neg + 2.0);

    double a = 0.0, b = std::log((n_neg + 1.0) / (n_pos + 1.0));
    auto objective = [&](double aa, double bb) {
        double obj = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = labels[i] == 1 ? t_pos : t_neg;
            const double z = aa * margins[i] + bb;
            // -t*log(p) - (1-t)*log(1-p), p = 1/(1+e^z), stable form
            obj += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - (1.0 - t) * z;
        }
        return obj;
    };
    double obj = objective(a, b);
    for (int it = 0; it < 100; ++it) {
        double g_a = 0, g_b = 0, h_aa = 0, h_ab = 0, h_bb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = labels[i] == 1 ? t_pos : t_neg;
            const double z = a * margins[i] + b;
            const double p = 1.0 / (1.0 + std::exp(z));
            const double d = t - p; // d obj / d z
            g_a += d * margins[i];
            g_b += d;
            const double w = p * (1.0 - p);
            h_aa += w * margins[i] * margins[i];
            h_ab += w * margins[i];
            h_bb += w;
        }
        if (std::abs(g_a) < 1e-10 && std::abs(g_b) < 1e-10) break;
        h_aa += 1e-12;
        h_bb += 1e-12;
        const double det = h_aa * h_bb - h_ab * h_ab;
        double da = -(h_bb * g_a - h_ab * g_b) / det;
        double db = -(-h_ab * g_a + h_aa * g_b) / det;
        double step = 1.0;
        bool ok = false;
        for (int bt = 0; bt < 30; ++bt) {
            double obj_try = objective(a + step * da, b + step * db);
            if (obj_try < obj + 1e-12) {
                a += step * da;
                b += step * db;
                obj = obj_try;
                ok = true;
                break;
            }
            step *= 0.5;
        }
        if (!ok) break;
    }
    return {a, b};
}

BowSvmModel BowSvmModel::train(const std::vector<LabeledExample>& examples,
                               const std::vector<std::size_t>& train_idx,
                               std::shared_ptr<const Vocabulary> vocab, const SvmConfig& cfg,
                               TrainReport* report) {
    if (train_idx.empty()) throw Error("bow-svm: empty training set");
    std::vector<std::vector<std::int32_t>> rows;
    std::vector<int> y;
    rows.reserve(train_idx.size());
    for (std::size_t i : train_idx) {
        rows.push_back(presence_row(examples[i].history, *vocab));
        y.push_back(examples[i].label == Label::Hospitalized ? 1 : 0);
    }
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0)
        throw Error("bow-svm: training set has a single class");

    // internal calibration fold (stratified)
    std::vector<std::size_t> fold, fit;
    {
        std::vector<std::size_t> by_class[2];
        for (std::size_t i = 0; i < rows.size(); ++i) by_class[y[i]].push_back(i);
        for (int c = 0; c < 2; ++c) {
            Rng rng(mix_seed(cfg.seed, 0x43414C49ULL + static_cast<std::uint64_t>(c)));
            auto& idx = by_class[c];
            for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.bounded(i)]);
            std::size_t k = std::max<std::size_t>(1, std::size_t(cfg.calibration_fraction * double(idx.size()) + 0.5));
            k = std::min(k, idx.size() - 1);
            fold.insert(fold.end(), idx.begin(), idx.begin() + k);
            fit.insert(fit.end(), idx.begin() + k, idx.end());
        }
        std::sort(fold.begin(), fold.end());
        std::sort(fit.begin(), fit.end());
    }

    const std::size_t dim = static_cast<std::size_t>(vocab->size());
    std::vector<double> w(dim, 0.0);
    double bias = 0.0;
    // lazy L2 scaling: weights are scale * w
    double scale = 1.0;
    long long t = 0;
    // averaged SGD: the returned weights are the mean iterate over the
    // final epoch, which removes most of the subgradient noise
    std::vector<double> w_avg(dim, 0.0);
    double bias_avg = 0.0;
    long long n_avg = 0;
    TrainReport rep;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, 0x45504F43ULL + static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order = fit;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.bounded(i)]);
        const bool averaging = epoch == cfg.epochs - 1;
        double hinge_sum = 0.0;
        for (std::size_t i : order) {
            ++t;
            const double eta = cfg.lr0 / (1.0 + cfg.lr0 * cfg.lambda * double(t));
            const double yi = y[i] == 1 ? 1.0 : -1.0;
            double z = bias;
            for (std::int32_t j : rows[i]) z += scale * w[static_cast<std::size_t>(j)];
            const double m = yi * z;
            scale *= 1.0 - eta * cfg.lambda;
            if (scale < 1e-9) { // fold the scale back in
                for (auto& v : w) v *= scale;
                scale = 1.0;
            }
            if (m < 1.0) {
                hinge_sum += 1.0 - m;
                const double upd = eta * yi / scale;
                for (std::int32_t j : rows[i]) w[static_cast<std::size_t>(j)] += upd;
                bias += eta * yi;
            }
            if (averaging) {
                for (std::size_t j = 0; j < dim; ++j) w_avg[j] += scale * w[j];
                bias_avg += bias;
                ++n_avg;
            }
        }
        rep.loss_path.push_back(hinge_sum / double(fit.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) w[j] = double(float(w_avg[j] / double(n_avg)));
    bias = double(float(bias_avg / double(n_avg)));

    std::vector<double> margins;
    std::vector<int> fold_y;
    margins.reserve(fold.size());
    for (std::size_t i : fold) {
        double z = bias;
        for (std::int32_t j : rows[i]) z += w[static_cast<std::size_t>(j)];
        margins.push_back(z);
        fold_y.push_back(y[i]);
    }
    auto [a, b] = fit_platt(margins, fold_y);
    a = double(float(a));
    b = double(float(b));

    rep.iterations = cfg.epochs;
    rep.final_loss = rep.loss_path.empty() ? 0.0 : rep.loss_path.back();
    if (report) *report = rep;
    return BowSvmModel(std::move(vocab), std::move(w), bias, a, b);
}

} // namespace clem
