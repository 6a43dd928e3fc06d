#include "clem/eval/lime.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "clem/error.hpp"
#include "clem/linalg.hpp"
#include "clem/narrative.hpp"
#include "clem/rng.hpp"

namespace clem {

double Explanation::importance_of(const std::string& surface) const {
    auto it = std::lower_bound(importance.begin(), importance.end(), surface,
                               [](const auto& a, const std::string& s) { return a.first < s; });
    if (it == importance.end() || it->first != surface)
        throw Error("explanation has no importance for token " + surface);
    return it->second;
}

namespace {

/// Rebuilds the history without the dropped tokens. Claims that lose
/// every code disappear; the claim skeleton is otherwise untouched.
PatientHistory drop_tokens(const PatientHistory& h, const std::vector<std::string>& features,
                           const std::vector<std::uint8_t>& keep) {
    auto kept = [&](const MedicalCode& c) {
        const std::string surface = code_token(c);
        auto it = std::lower_bound(features.begin(), features.end(), surface);
        if (it == features.end() || *it != surface) return true; // not a feature: keep
        return keep[static_cast<std::size_t>(it - features.begin())] != 0;
    };
    PatientHistory out;
    out.patient_id = h.patient_id;
    out.age_years = h.age_years;
    out.sex = h.sex;
    out.anchor_date = h.anchor_date;
    for (const auto& claim : h.claims) {
        Claim c;
        c.claim_id = claim.claim_id;
        c.service_date = claim.service_date;
        c.is_hospitalization = claim.is_hospitalization;
        for (const auto& code : claim.dx)
            if (kept(code)) c.dx.push_back(code);
        for (const auto& code : claim.px)
            if (kept(code)) c.px.push_back(code);
        for (const auto& code : claim.rx)
            if (kept(code)) c.rx.push_back(code);
        if (claim.primary_dx &&
            std::find(c.dx.begin(), c.dx.end(), *claim.primary_dx) != c.dx.end())
            c.primary_dx = claim.primary_dx;
        if (c.dx.empty() && c.px.empty() && c.rx.empty()) continue;
        out.claims.push_back(std::move(c));
    }
    return out;
}

} // namespace

Explanation lime_explain(const Classifier& classifier, const PatientHistory& history,
                         const LimeConfig& cfg, std::uint64_t seed) {
    // canonical feature order: distinct code-token surfaces, sorted
    std::vector<std::string> features;
    {
        std::map<std::string, int> seen;
        for (const auto& claim : history.claims) {
            for (const auto& c : claim.dx) seen.emplace(code_token(c), 0);
            for (const auto& c : claim.px) seen.emplace(code_token(c), 0);
            for (const auto& c : claim.rx) seen.emplace(code_token(c), 0);
        }
        for (auto& [surface, _] : seen) features.push_back(surface);
    }
    const std::size_t m = features.size();
    if (m == 0) throw Error("lime_explain: history has no code tokens");
    if (cfg.n_samples < 2) throw ConfigError("lime_explain: n_samples must be >= 2");

    const double kw = cfg.kernel_width_scale * std::sqrt(double(m));
    const std::size_t n = static_cast<std::size_t>(cfg.n_samples);

    std::vector<std::uint8_t> keep(m, 1);
    std::vector<double> X(n * m);
    std::vector<double> y(n), w(n);
    Rng rng(seed);
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t dropped = 0;
        if (s == 0) {
            std::fill(keep.begin(), keep.end(), std::uint8_t(1)); // the original
        } else {
            for (std::size_t j = 0; j < m; ++j) {
                keep[j] = rng.bernoulli(cfg.drop_probability) ? 0 : 1;
                if (!keep[j]) ++dropped;
            }
        }
        for (std::size_t j = 0; j < m; ++j) X[s * m + j] = keep[j];
        const double d = double(dropped) / double(m);
        w[s] = std::exp(-(d * d) / (kw * kw));
        y[s] = s == 0 ? classifier.predict_proba(history)
                      : classifier.predict_proba(drop_tokens(history, features, keep));
    }

    // weighted ridge with unpenalized intercept: columns [1 | X]
    const std::size_t p = m + 1;
    std::vector<double> A(p * p, 0.0), rhs(p, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        const double ws = w[s];
        // intercept row/col
        A[0] += ws;
        for (std::size_t j = 0; j < m; ++j) {
            const double xj = X[s * m + j];
            if (xj == 0.0) continue;
            A[j + 1] += ws * xj;
            for (std::size_t k = j; k < m; ++k) {
                const double xk = X[s * m + k];
                if (xk != 0.0) A[(j + 1) * p + (k + 1)] += ws * xj * xk;
            }
        }
        rhs[0] += ws * y[s];
        for (std::size_t j = 0; j < m; ++j)
            if (X[s * m + j] != 0.0) rhs[j + 1] += ws * X[s * m + j] * y[s];
    }
    // mirror the symmetric parts
    for (std::size_t j = 1; j < p; ++j) {
        A[j * p] = A[j];
        for (std::size_t k = j + 1; k < p; ++k) A[k * p + j] = A[j * p + k];
    }
    for (std::size_t j = 1; j < p; ++j) A[j * p + j] += cfg.ridge_lambda;
    A[0] += 1e-12; // intercept stays unpenalized; tiny jitter for rank safety

    std::vector<double> beta = solve_spd(std::move(A), std::move(rhs), p);

    // weighted R^2
    double wsum = 0, ymean = 0;
    for (std::size_t s = 0; s < n; ++s) {
        wsum += w[s];
        ymean += w[s] * y[s];
    }
    ymean /= wsum;
    double ss_res = 0, ss_tot = 0;
    for (std::size_t s = 0; s < n; ++s) {
        double pred = beta[0];
        for (std::size_t j = 0; j < m; ++j) pred += beta[j + 1] * X[s * m + j];
        ss_res += w[s] * (y[s] - pred) * (y[s] - pred);
        ss_tot += w[s] * (y[s] - ymean) * (y[s] - ymean);
    }

    Explanation e;
    e.kernel_width = kw;
    e.n_samples = cfg.n_samples;
    e.seed = seed;
    e.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    e.importance.reserve(m);
    for (std::size_t j = 0; j < m; ++j) e.importance.emplace_back(features[j], beta[j + 1]);
    return e;
}

} // namespace clem
