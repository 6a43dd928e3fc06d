#include "clem/synthgen.hpp"

#include <algorithm>
#include <cstdio>

#include "clem/error.hpp"
#include "clem/rng.hpp"

namespace clem {

namespace {

constexpr std::uint64_t kCohortStream = 0x100000000ULL;
constexpr std::uint64_t kPretrainStream = 0x200000000ULL;

std::string fmt(const char* f, unsigned long long v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

ConditionProfile make_profile(int i, const char* name, const char* dx_prefix, double prevalence,
                              double log_odds) {
    ConditionProfile p;
    p.name = name;
    p.base_prevalence = prevalence;
    p.log_odds = log_odds;
    static const char* suffixes = "0123456789AB";
    for (int j = 0; j < 12; ++j)
        p.dx_pool.push_back({CodeSystem::Diagnosis, std::string(dx_prefix) + suffixes[j]});
    if (p.name == "dialysis") {
        for (int j = 0; j < 9; ++j)
            p.px_pool.push_back({CodeSystem::Procedure, fmt("%05llu", 90935ULL + j)});
    } else if (i % 2 == 0) {
        for (int j = 0; j < 9; ++j)
            p.px_pool.push_back({CodeSystem::Procedure, fmt("%05llu", 20000ULL + i * 20 + j)});
    } else {
        static const char letters[] = {'A', 'C', 'E', 'G', 'J', 'L', 'Q', 'S'};
        for (int j = 0; j < 9; ++j)
            p.px_pool.push_back({CodeSystem::Procedure,
                                 letters[i % 8] + fmt("%04llu", 1000ULL + i * 10 + j)});
    }
    for (int j = 0; j < 9; ++j)
        p.rx_pool.push_back({CodeSystem::Medication, fmt("%011llu", 10000000000ULL + i * 1000 + j * 10)});
    return p;
}

} // namespace

GeneratorConfig GeneratorConfig::defaults() {
    GeneratorConfig c;
    struct Row {
        const char* name;
        const char* dx_prefix;
        double prevalence;
        double log_odds;
    };
    // 27 profiles planted inside high-risk prefix ranges, 13 benign.
    static const Row rows[] = {
        {"cancer_lung", "C34", 0.05, 1.95},     {"cancer_breast", "C50", 0.06, 1.65},
        {"sickle_cell", "D57", 0.03, 1.80},     {"immunodeficiency", "D80", 0.04, 2.10},
        {"diabetes_t2", "E11", 0.14, 1.50},     {"diabetes_t1", "E10", 0.05, 1.65},
        {"obesity", "E66", 0.18, 1.35},         {"cystic_fibrosis", "E84", 0.02, 2.25},
        {"substance_use", "F11", 0.07, 0.90},   {"smoking", "F17", 0.15, 1.20},
        {"dementia", "F02", 0.06, 1.80},        {"hypertension", "I10", 0.22, 1.05},
        {"ischemic_heart", "I25", 0.10, 1.65},  {"heart_failure", "I50", 0.07, 2.40},
        {"cerebrovascular", "I63", 0.06, 1.80}, {"copd", "J44", 0.09, 2.10},
        {"asthma", "J45", 0.12, 1.20},          {"interstitial_lung", "J84", 0.03, 1.95},
        {"liver_disease", "K74", 0.05, 1.50},   {"ckd", "N18", 0.08, 2.25},
        {"pregnancy", "O26", 0.06, 0.60},       {"down_syndrome", "Q90", 0.02, 1.50},
        {"tuberculosis", "A15", 0.03, 1.35},    {"hiv", "B20", 0.04, 1.80},
        {"transplant", "Z94", 0.03, 1.95},      {"dialysis", "Z99", 0.04, 2.40},
        {"mood_disorder", "F32", 0.12, 0.75},   {"common_cold", "J00", 0.25, -0.15},
        {"back_pain", "M54", 0.22, 0.00},       {"dermatitis", "L30", 0.15, -0.075},
        {"rhinitis", "J30", 0.18, 0.00},        {"migraine", "G43", 0.12, 0.075},
        {"gerd", "K21", 0.16, 0.15},            {"uti", "N39", 0.10, 0.15},
        {"sprain", "S93", 0.12, -0.15},         {"anxiety", "F41", 0.14, 0.225},
        {"hyperlipidemia", "E78", 0.20, 0.30},  {"hypothyroid", "E03", 0.10, 0.15},
        {"osteoarthritis", "M17", 0.14, 0.075}, {"checkup", "Z00", 0.30, -0.30},
    };
    int i = 0;
    for (const auto& r : rows)
        c.profiles.push_back(make_profile(i++, r.name, r.dx_prefix, r.prevalence, r.log_odds));
    return c;
}

const NoisePools& generator_noise_pools() {
    static const NoisePools pools = [] {
        NoisePools p;
        for (int j = 0; j < 100; ++j)
            p.dx.push_back({CodeSystem::Diagnosis, "T" + fmt("%03llu", 100ULL + j)});
        for (int j = 0; j < 50; ++j)
            p.px.push_back({CodeSystem::Procedure, fmt("%05llu", 30000ULL + j)});
        for (int j = 0; j < 50; ++j)
            p.rx.push_back({CodeSystem::Medication, fmt("%011llu", 90000000000ULL + j)});
        for (const char* v : {"R05", "R060", "R062", "R069", "R509", "R53"})
            p.symptom_dx.push_back({CodeSystem::Diagnosis, v});
        return p;
    }();
    return pools;
}

namespace {

struct PatientDraw {
    int age;
    Sex sex;
    std::vector<int> actives; // profile indices
};

PatientDraw draw_patient(Rng& rng, const GeneratorConfig& cfg) {
    PatientDraw d;
    d.age = 18 + static_cast<int>(rng.bounded(78));
    d.sex = rng.bounded(2) == 0 ? Sex::F : Sex::M;
    for (std::size_t p = 0; p < cfg.profiles.size(); ++p)
        if (rng.bernoulli(cfg.profiles[p].base_prevalence)) d.actives.push_back(static_cast<int>(p));
    return d;
}

const MedicalCode& pick(Rng& rng, const std::vector<MedicalCode>& pool) {
    return pool[rng.bounded(pool.size())];
}

/// Emits one claim's codes for the given conditions (noise-only when the
/// condition list is empty). Every claim ends up with at least one code.
Claim emit_claim(Rng& rng, const GeneratorConfig& cfg, const std::vector<int>& conditions,
                 const Date& date) {
    const auto& noise = generator_noise_pools();
    Claim c;
    c.service_date = date;
    for (int ci : conditions) {
        const auto& prof = cfg.profiles[static_cast<std::size_t>(ci)];
        int n_dx = 2 + static_cast<int>(rng.bounded(3));
        for (int k = 0; k < n_dx; ++k) c.dx.push_back(pick(rng, prof.dx_pool));
        int n_px = static_cast<int>(rng.bounded(3));
        for (int k = 0; k < n_px; ++k) c.px.push_back(pick(rng, prof.px_pool));
        int n_rx = static_cast<int>(rng.bounded(3));
        for (int k = 0; k < n_rx; ++k) c.rx.push_back(pick(rng, prof.rx_pool));
    }
    if (conditions.empty()) c.dx.push_back(pick(rng, noise.dx));
    if (rng.bernoulli(cfg.noise_code_rate)) c.dx.push_back(pick(rng, noise.dx));
    if (rng.bernoulli(cfg.noise_code_rate * 0.5)) c.px.push_back(pick(rng, noise.px));
    if (rng.bernoulli(cfg.noise_code_rate * 0.5)) c.rx.push_back(pick(rng, noise.rx));
    c.is_hospitalization = rng.bernoulli(0.03);
    c.primary_dx = c.dx.front();
    return c;
}

/// Pre-anchor (or anchor-free) claims. Every active condition appears in
/// at least one claim, so the oracle can recover the active set exactly.
std::vector<Claim> emit_history_claims(Rng& rng, const GeneratorConfig& cfg,
                                       const PatientDraw& d, int n_claims,
                                       const std::function<Date()>& draw_date) {
    std::vector<Claim> claims;
    n_claims = std::max<int>(n_claims, static_cast<int>(d.actives.size()));
    for (int j = 0; j < n_claims; ++j) {
        std::vector<int> conds;
        if (!d.actives.empty()) {
            conds.push_back(d.actives[static_cast<std::size_t>(j) % d.actives.size()]);
            if (rng.bernoulli(0.4)) {
                int extra = d.actives[rng.bounded(d.actives.size())];
                if (extra != conds[0]) conds.push_back(extra);
            }
        }
        claims.push_back(emit_claim(rng, cfg, conds, draw_date()));
    }
    std::stable_sort(claims.begin(), claims.end(),
                     [](const Claim& a, const Claim& b) { return a.service_date < b.service_date; });
    return claims;
}

void assign_claim_ids(PatientHistory& h) {
    for (std::size_t j = 0; j < h.claims.size(); ++j)
        h.claims[j].claim_id = h.patient_id + "-C" + fmt("%02llu", j);
}

double patient_score(const GeneratorConfig& cfg, const PatientDraw& d) {
    double s = cfg.intercept;
    for (int p : d.actives) s += cfg.profiles[static_cast<std::size_t>(p)].log_odds;
    s += cfg.age_coeff * AgeBucketTable::defaults().bucket(d.age).ordinal;
    if (d.sex == Sex::M) s += cfg.sex_coeff;
    return s;
}

} // namespace

std::vector<PatientHistory> generate_pretrain_corpus(const GeneratorConfig& cfg) {
    const long n_patients = (cfg.n_pretrain_claims + 9) / 10;
    std::vector<PatientHistory> out;
    out.reserve(static_cast<std::size_t>(n_patients));
    const Date start{2019, 1, 1};
    for (long i = 0; i < n_patients; ++i) {
        Rng rng(mix_seed(cfg.seed, kPretrainStream + static_cast<std::uint64_t>(i)));
        PatientDraw d = draw_patient(rng, cfg);
        PatientHistory h;
        h.patient_id = "S" + fmt("%07llu", static_cast<unsigned long long>(i));
        h.age_years = d.age;
        h.sex = d.sex;
        int n_claims = 6 + static_cast<int>(rng.bounded(9)); // 6..14, mean 10
        h.claims = emit_history_claims(rng, cfg, d, n_claims,
                                       [&] { return add_days(start, rng.bounded(730)); });
        assign_claim_ids(h);
        out.push_back(std::move(h));
    }
    return out;
}

std::vector<PatientHistory> generate_labeled_cohort(const GeneratorConfig& cfg) {
    const auto& noise = generator_noise_pools();
    std::vector<PatientHistory> out;
    out.reserve(static_cast<std::size_t>(cfg.n_patients));
    const MedicalCode covid{CodeSystem::Diagnosis, cfg.covid_dx};
    for (int i = 0; i < cfg.n_patients; ++i) {
        Rng rng(mix_seed(cfg.seed, kCohortStream + static_cast<std::uint64_t>(i)));
        PatientDraw d = draw_patient(rng, cfg);
        PatientHistory h;
        h.patient_id = "P" + fmt("%07llu", static_cast<unsigned long long>(i));
        h.age_years = d.age;
        h.sex = d.sex;
        h.anchor_date = add_days(Date{2020, 3, 1}, rng.bounded(275));
        const Date anchor = *h.anchor_date;
        int span = cfg.max_claims - cfg.min_claims + 1;
        int n_claims = cfg.min_claims + static_cast<int>(rng.bounded(span));
        h.claims = emit_history_claims(
            rng, cfg, d, n_claims, [&] { return add_days(anchor, -8 - int64_t(rng.bounded(1050))); });

        const bool hospitalized = rng.bernoulli(sigmoid(patient_score(cfg, d)));
        if (hospitalized) {
            Claim c;
            c.service_date = add_days(anchor, 2 + int64_t(rng.bounded(26)));
            c.is_hospitalization = true;
            c.dx.push_back(covid);
            if (rng.bernoulli(0.5)) c.dx.push_back(pick(rng, noise.symptom_dx));
            if (rng.bernoulli(0.3)) c.px.push_back(pick(rng, noise.px));
            c.primary_dx = covid;
            h.claims.push_back(std::move(c));
        } else if (rng.bernoulli(0.7)) {
            Claim c;
            c.service_date = add_days(anchor, 3 + int64_t(rng.bounded(27)));
            c.is_hospitalization = false;
            c.dx.push_back(pick(rng, noise.dx));
            c.primary_dx = c.dx.front();
            h.claims.push_back(std::move(c));
        }
        // covid-era symptom claims inside the leakage window; the filter
        // must drop these or early infection signs leak into features
        if (rng.bernoulli(hospitalized ? 0.7 : 0.25)) {
            Claim c;
            c.service_date = add_days(anchor, -int64_t(rng.bounded(8)));
            c.is_hospitalization = false;
            int n = 1 + static_cast<int>(rng.bounded(2));
            for (int k = 0; k < n; ++k) c.dx.push_back(pick(rng, noise.symptom_dx));
            c.primary_dx = c.dx.front();
            h.claims.push_back(std::move(c));
        }
        std::stable_sort(h.claims.begin(), h.claims.end(),
                         [](const Claim& a, const Claim& b) { return a.service_date < b.service_date; });
        assign_claim_ids(h);
        out.push_back(std::move(h));
    }
    return out;
}

Oracle::Oracle(const GeneratorConfig& config) : config_(config) {
    auto add = [&](const MedicalCode& c, int profile) {
        index_[static_cast<int>(c.system)].emplace(c.value, profile);
    };
    for (std::size_t p = 0; p < config.profiles.size(); ++p) {
        const auto& prof = config.profiles[p];
        for (const auto& c : prof.dx_pool) add(c, static_cast<int>(p));
        for (const auto& c : prof.px_pool) add(c, static_cast<int>(p));
        for (const auto& c : prof.rx_pool) add(c, static_cast<int>(p));
    }
    const auto& noise = generator_noise_pools();
    for (const auto& c : noise.dx) add(c, -1);
    for (const auto& c : noise.px) add(c, -1);
    for (const auto& c : noise.rx) add(c, -1);
    for (const auto& c : noise.symptom_dx) add(c, -1);
}

double Oracle::score(const PatientHistory& history) const {
    PatientHistory filtered = apply_leakage_filter(history);
    std::vector<bool> active(config_.profiles.size(), false);
    auto see = [&](const MedicalCode& code) {
        const auto& idx = index_[static_cast<int>(code.system)];
        auto it = idx.find(code.value);
        if (it == idx.end())
            throw Error("history not attributable to generator config: unknown code " + code.value);
        if (it->second >= 0) active[static_cast<std::size_t>(it->second)] = true;
    };
    for (const auto& claim : filtered.claims) {
        for (const auto& c : claim.dx) see(c);
        for (const auto& c : claim.px) see(c);
        for (const auto& c : claim.rx) see(c);
    }
    double s = config_.intercept;
    for (std::size_t p = 0; p < active.size(); ++p)
        if (active[p]) s += config_.profiles[p].log_odds;
    s += config_.age_coeff * AgeBucketTable::defaults().bucket(filtered.age_years).ordinal;
    if (filtered.sex == Sex::M) s += config_.sex_coeff;
    return s;
}

double oracle_score(const PatientHistory& history, const GeneratorConfig& config) {
    return Oracle(config).score(history);
}

double oracle_probability(const PatientHistory& history, const GeneratorConfig& config) {
    return sigmoid(oracle_score(history, config));
}

} // namespace clem
