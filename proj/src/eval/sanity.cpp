#include "clem/eval/sanity.hpp"

#include <algorithm>
#include <cstdio>

#include "clem/rng.hpp"

namespace clem {

namespace {

MedicalCode code_from_token(const Vocabulary& vocab, std::int32_t id) {
    const std::string& surface = vocab.surface(id);
    CodeSystem system;
    switch (vocab.kind(id)) {
        case TokenKind::Dx: system = CodeSystem::Diagnosis; break;
        case TokenKind::Px: system = CodeSystem::Procedure; break;
        default: system = CodeSystem::Medication; break;
    }
    return MedicalCode{system, surface.substr(surface.find('_') + 1)};
}

/// One synthetic lookback history from the given codes: ~3 codes per
/// claim, claims spread backwards month by month.
PatientHistory assemble_history(const std::vector<MedicalCode>& codes, int age, Sex sex,
                                const std::string& pid) {
    PatientHistory h;
    h.patient_id = pid;
    h.age_years = age;
    h.sex = sex;
    const Date base{2020, 1, 15};
    std::size_t at = 0;
    int claim_no = 0;
    while (at < codes.size()) {
        Claim c;
        c.claim_id = pid + "-C" + std::to_string(claim_no);
        c.service_date = add_days(base, -30 * claim_no);
        for (std::size_t k = 0; k < 3 && at < codes.size(); ++k, ++at) {
            const auto& code = codes[at];
            if (code.system == CodeSystem::Diagnosis) c.dx.push_back(code);
            else if (code.system == CodeSystem::Procedure) c.px.push_back(code);
            else c.rx.push_back(code);
        }
        if (!c.dx.empty()) c.primary_dx = c.dx.front();
        h.claims.push_back(std::move(c));
        ++claim_no;
    }
    std::reverse(h.claims.begin(), h.claims.end()); // ascending service dates
    return h;
}

} // namespace

SanityResult highrisk_sanity_check(const std::vector<const Classifier*>& classifiers,
                                   const RiskFactorMap& risk_map, const EmbeddingTable& table,
                                   const Vocabulary& vocab, const SanityConfig& cfg,
                                   const AgeBucketTable& buckets) {
    (void)table;
    (void)buckets;
    // vocabulary dx/px tokens inside each risk range, and outside all
    std::vector<std::vector<std::int32_t>> per_risk(risk_map.size());
    std::vector<std::int32_t> no_risk;
    for (std::int32_t id = 0; id < vocab.size(); ++id) {
        const TokenKind k = vocab.kind(id);
        if (k != TokenKind::Dx && k != TokenKind::Px) continue;
        const MedicalCode code = code_from_token(vocab, id);
        auto risks = risk_map.match(code);
        if (risks.empty()) no_risk.push_back(id);
        for (int r : risks) per_risk[static_cast<std::size_t>(r)].push_back(id);
    }

    SanityResult result;
    result.n_variations = cfg.n_variations;
    for (std::size_t r = 0; r < per_risk.size(); ++r)
        if (per_risk[r].empty()) result.risks_without_codes.push_back(risk_map.names()[r]);

    std::vector<double> high_sum(classifiers.size(), 0.0), norisk_sum(classifiers.size(), 0.0);
    std::vector<double> high_pos(classifiers.size(), 0.0);
    for (int v = 0; v < cfg.n_variations; ++v) {
        Rng rng(mix_seed(cfg.seed, 0x53414E49ULL + static_cast<std::uint64_t>(v)));
        const int age = 50 + static_cast<int>(rng.bounded(40));
        const Sex sex = v % 2 == 0 ? Sex::F : Sex::M;

        std::vector<MedicalCode> high_codes;
        for (const auto& candidates : per_risk) {
            if (candidates.empty()) continue;
            const int n_pick = 1 + static_cast<int>(rng.bounded(2));
            for (int k = 0; k < n_pick; ++k)
                high_codes.push_back(
                    code_from_token(vocab, candidates[rng.bounded(candidates.size())]));
        }
        std::vector<MedicalCode> norisk_codes;
        for (std::size_t k = 0; k < high_codes.size() && !no_risk.empty(); ++k)
            norisk_codes.push_back(code_from_token(vocab, no_risk[rng.bounded(no_risk.size())]));

        const auto high = assemble_history(high_codes, age, sex, "HIGH" + std::to_string(v));
        const auto none = assemble_history(norisk_codes, age, sex, "NONE" + std::to_string(v));
        for (std::size_t c = 0; c < classifiers.size(); ++c) {
            const double ph = classifiers[c]->predict_proba(high);
            const double pn = classifiers[c]->predict_proba(none);
            high_sum[c] += ph;
            norisk_sum[c] += pn;
            if (ph >= 0.5) high_pos[c] += 1.0;
        }
    }

    for (std::size_t c = 0; c < classifiers.size(); ++c) {
        SanityResult::PerModel pm;
        pm.model = model_kind_tag(classifiers[c]->kind());
        pm.mean_prob_high_risk = high_sum[c] / double(cfg.n_variations);
        pm.mean_prob_no_risk = norisk_sum[c] / double(cfg.n_variations);
        pm.fraction_high_predicted_positive = high_pos[c] / double(cfg.n_variations);
        result.models.push_back(pm);
    }
    return result;
}

std::string sanity_to_text(const SanityResult& r) {
    std::string out = "high-risk sanity check (" + std::to_string(r.n_variations) + " variations)\n";
    char buf[160];
    for (const auto& m : r.models) {
        std::snprintf(buf, sizeof(buf), "  %-12s mean p(high-risk)=%.4f  mean p(no-risk)=%.4f  frac(p>=0.5 on high)=%.2f\n",
                      m.model.c_str(), m.mean_prob_high_risk, m.mean_prob_no_risk,
                      m.fraction_high_predicted_positive);
        out += buf;
    }
    if (!r.risks_without_codes.empty()) {
        out += "  ranges without vocabulary codes:";
        for (const auto& n : r.risks_without_codes) out += " " + n;
        out += "\n";
    }
    return out;
}

} // namespace clem
