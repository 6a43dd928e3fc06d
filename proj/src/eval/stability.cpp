#include "clem/eval/stability.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <omp.h>

#include "clem/error.hpp"
#include "clem/rng.hpp"

namespace clem {

Perturber::Perturber(std::shared_ptr<const EmbeddingTable> table,
                     std::shared_ptr<const Vocabulary> vocab, int threads)
    : table_(std::move(table)), vocab_(std::move(vocab)) {
    std::vector<std::int32_t> queries;
    for (std::int32_t id = 0; id < vocab_->size(); ++id)
        if (is_code_kind(vocab_->kind(id))) queries.push_back(id);
    auto neighbors = nearest_many(queries, *table_, *vocab_, /*same_system=*/true, threads);
    neighbor_.reserve(queries.size() * 2);
    for (std::size_t i = 0; i < queries.size(); ++i) neighbor_.emplace(queries[i], neighbors[i]);
}

PerturbedPair Perturber::perturb(const PatientHistory& history) const {
    PerturbedPair pair;
    pair.original = history;
    pair.perturbed = history;
    std::map<std::string, std::string> subs;

    auto substitute = [&](MedicalCode& code) {
        const std::string surface = code_token(code);
        const std::int32_t id = vocab_->id(surface);
        if (id == kUnkId) {
            pair.n_unknown_codes += 1;
            subs.emplace(surface, surface);
            return;
        }
        auto it = neighbor_.find(id);
        if (it == neighbor_.end()) {
            pair.n_unknown_codes += 1;
            subs.emplace(surface, surface);
            return;
        }
        const std::string& repl = vocab_->surface(it->second);
        // strip the kind prefix; replacement is same-kind by construction
        code.value = repl.substr(repl.find('_') + 1);
        pair.n_substituted_occurrences += 1;
        subs.emplace(surface, repl);
    };

    for (auto& claim : pair.perturbed.claims) {
        for (auto& c : claim.dx) substitute(c);
        for (auto& c : claim.px) substitute(c);
        for (auto& c : claim.rx) substitute(c);
        if (claim.primary_dx) substitute(*claim.primary_dx);
    }
    pair.substitutions.assign(subs.begin(), subs.end());
    return pair;
}

std::function<PerturbedPair(const PatientHistory&)> Perturber::identity() {
    return [](const PatientHistory& h) {
        PerturbedPair pair;
        pair.original = h;
        pair.perturbed = h;
        return pair;
    };
}

namespace {

bool has_code_tokens(const PatientHistory& h) {
    for (const auto& c : h.claims)
        if (!c.dx.empty() || !c.px.empty() || !c.rx.empty()) return true;
    return false;
}

} // namespace

StabilityReport stability_eval(const Classifier& classifier,
                               const std::vector<PatientHistory>& test_histories,
                               const std::function<PerturbedPair(const PatientHistory&)>& perturb,
                               const StabilityConfig& cfg) {
    if (test_histories.empty()) throw Error("stability_eval: empty test set");

    std::vector<std::size_t> chosen(test_histories.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
    StabilityReport report;
    report.seed = cfg.seed;
    if (static_cast<std::size_t>(cfg.n_samples) < chosen.size()) {
        Rng rng(mix_seed(cfg.seed, 0x53544142ULL));
        for (std::size_t i = chosen.size(); i > 1; --i)
            std::swap(chosen[i - 1], chosen[rng.bounded(i)]);
        chosen.resize(static_cast<std::size_t>(cfg.n_samples));
        std::sort(chosen.begin(), chosen.end());
    } else {
        report.used_entire_set = true;
    }

    const std::int64_t n = static_cast<std::int64_t>(chosen.size());
    std::vector<double> diff(static_cast<std::size_t>(n), 0.0);
    std::vector<std::uint8_t> agree(static_cast<std::size_t>(n), 0);
    std::vector<double> mse(static_cast<std::size_t>(n), 0.0);
    std::vector<std::uint8_t> lime_ok(static_cast<std::size_t>(n), 0);

#pragma omp parallel for schedule(dynamic, 8) num_threads(std::max(1, cfg.threads))
    for (std::int64_t k = 0; k < n; ++k) {
        const auto& h = test_histories[chosen[static_cast<std::size_t>(k)]];
        PerturbedPair pair = perturb(h);
        const double p_orig = classifier.predict_proba(pair.original);
        const double p_pert = classifier.predict_proba(pair.perturbed);
        diff[static_cast<std::size_t>(k)] = std::abs(p_orig - p_pert) * 100.0;
        agree[static_cast<std::size_t>(k)] = (p_orig >= 0.5) == (p_pert >= 0.5) ? 1 : 0;

        if (!has_code_tokens(pair.original)) continue;
        const std::uint64_t lime_seed = mix_seed(cfg.seed, 0x4C494D45ULL + std::uint64_t(k));
        Explanation e_orig = lime_explain(classifier, pair.original, cfg.lime, lime_seed);
        Explanation e_pert = lime_explain(classifier, pair.perturbed, cfg.lime, lime_seed);
        double se = 0.0;
        std::size_t terms = 0;
        for (const auto& [orig_surface, repl_surface] : pair.substitutions) {
            const double a = e_orig.importance_of(orig_surface);
            const double b = e_pert.importance_of(repl_surface);
            se += (a - b) * (a - b);
            ++terms;
        }
        if (terms > 0) {
            mse[static_cast<std::size_t>(k)] = se / double(terms);
            lime_ok[static_cast<std::size_t>(k)] = 1;
        }
    }

    double diff_sum = 0.0, mse_sum = 0.0;
    long agree_count = 0, lime_count = 0;
    for (std::int64_t k = 0; k < n; ++k) {
        diff_sum += diff[static_cast<std::size_t>(k)];
        agree_count += agree[static_cast<std::size_t>(k)];
        if (lime_ok[static_cast<std::size_t>(k)]) {
            mse_sum += mse[static_cast<std::size_t>(k)];
            ++lime_count;
        }
    }
    report.n_pairs = static_cast<long>(n);
    report.n_lime_pairs = lime_count;
    report.predict_prob_diff_mean = diff_sum / double(n);
    report.predict_agreement = 100.0 * double(agree_count) / double(n);
    report.var_importance_mse = lime_count > 0 ? mse_sum / double(lime_count) : 0.0;
    return report;
}

} // namespace clem
