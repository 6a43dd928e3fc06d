#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "clem/claims.hpp"
#include "clem/error.hpp"
#include "clem/preprocess.hpp"
#include "clem/synthgen.hpp"
#include "testutil.hpp"

using namespace clem;
using namespace clem::testutil;

namespace {

std::string corpus_bytes(const std::vector<PatientHistory>& records) {
    const std::string path = "/tmp/clem_synthgen_bytes.jsonl";
    save_claims_corpus(records, path);
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("default profiles: 40 disjoint pools, ~1200 codes, valid formats") {
    const auto cfg = GeneratorConfig::defaults();
    REQUIRE(cfg.profiles.size() == 40);
    std::map<std::string, std::string> owner; // code value+system -> profile
    std::size_t total = 0;
    for (const auto& p : cfg.profiles) {
        CHECK(p.base_prevalence > 0.0);
        CHECK(p.base_prevalence < 1.0);
        CHECK(!p.dx_pool.empty());
        auto claim_codes = [&](const std::vector<MedicalCode>& pool, CodeSystem system) {
            for (const auto& c : pool) {
                CHECK(c.system == system);
                CHECK(valid_code_value(system, c.value));
                auto key = std::string(system_tag(system)) + c.value;
                auto [it, inserted] = owner.emplace(key, p.name);
                if (!inserted) FAIL("code ", c.value, " shared by ", it->second, " and ", p.name);
                ++total;
            }
        };
        claim_codes(p.dx_pool, CodeSystem::Diagnosis);
        claim_codes(p.px_pool, CodeSystem::Procedure);
        claim_codes(p.rx_pool, CodeSystem::Medication);
    }
    CHECK(total == 1200);

    // 27 profiles sit inside high-risk ranges of the default map
    int risky = 0;
    for (const auto& p : cfg.profiles)
        if (default_risk_map().matches_any(p.dx_pool.front())) ++risky;
    CHECK(risky == 27);
    // every default risk range is covered by some profile dx pool
    std::vector<bool> covered(default_risk_map().size(), false);
    for (const auto& p : cfg.profiles)
        for (const auto& c : p.dx_pool)
            for (int r : default_risk_map().match(c)) covered[static_cast<std::size_t>(r)] = true;
    for (std::size_t r = 0; r < covered.size(); ++r) CHECK(covered[r]);
}

TEST_CASE("same config and seed give byte-identical corpora") {
    GeneratorConfig cfg = GeneratorConfig::defaults();
    cfg.n_pretrain_claims = 3000;
    cfg.n_patients = 300;
    CHECK(corpus_bytes(generate_pretrain_corpus(cfg)) == corpus_bytes(generate_pretrain_corpus(cfg)));
    CHECK(corpus_bytes(generate_labeled_cohort(cfg)) == corpus_bytes(generate_labeled_cohort(cfg)));
    GeneratorConfig other = cfg;
    other.seed = cfg.seed + 1;
    CHECK(corpus_bytes(generate_pretrain_corpus(other)) != corpus_bytes(generate_pretrain_corpus(cfg)));
}

TEST_CASE("zero noise and a near-certain single profile emit only pool codes") {
    GeneratorConfig cfg;
    cfg.profiles = {GeneratorConfig::defaults().profiles[4]}; // diabetes_t2
    cfg.profiles[0].base_prevalence = 0.9999;
    cfg.noise_code_rate = 0.0;
    cfg.n_pretrain_claims = 2000;
    std::map<std::string, bool> pool;
    for (const auto& c : cfg.profiles[0].dx_pool) pool["dx" + c.value] = true;
    for (const auto& c : cfg.profiles[0].px_pool) pool["px" + c.value] = true;
    for (const auto& c : cfg.profiles[0].rx_pool) pool["rx" + c.value] = true;

    int histories_with_pool = 0, histories_total = 0;
    for (const auto& h : generate_pretrain_corpus(cfg)) {
        ++histories_total;
        bool any_pool = false, any_other = false;
        auto probe = [&](const MedicalCode& c) {
            (pool.count(std::string(system_tag(c.system)) + c.value) ? any_pool : any_other) = true;
        };
        for (const auto& claim : h.claims) {
            for (const auto& c : claim.dx) probe(c);
            for (const auto& c : claim.px) probe(c);
            for (const auto& c : claim.rx) probe(c);
        }
        if (any_pool) {
            ++histories_with_pool;
            CHECK(!any_other); // active patients draw exclusively from the pools
        }
    }
    CHECK(histories_with_pool >= histories_total - 1); // prevalence 0.9999
}

TEST_CASE("planted prevalence concentrates at the configured value") {
    GeneratorConfig cfg = GeneratorConfig::defaults();
    cfg.n_pretrain_claims = 100000; // -> 10,000 patients
    for (auto& p : cfg.profiles) p.base_prevalence = 0.05;
    cfg.profiles[0].base_prevalence = 0.3;

    // count patients with profile 0 active via pool attribution
    std::map<std::string, bool> pool0;
    for (const auto& c : cfg.profiles[0].dx_pool) pool0["dx" + c.value] = true;
    for (const auto& c : cfg.profiles[0].px_pool) pool0["px" + c.value] = true;
    for (const auto& c : cfg.profiles[0].rx_pool) pool0["rx" + c.value] = true;
    int active = 0, total = 0;
    for (const auto& h : generate_pretrain_corpus(cfg)) {
        ++total;
        bool hit = false;
        for (const auto& claim : h.claims) {
            for (const auto& c : claim.dx) hit = hit || pool0.count("dx" + c.value) > 0;
            for (const auto& c : claim.px) hit = hit || pool0.count("px" + c.value) > 0;
            for (const auto& c : claim.rx) hit = hit || pool0.count("rx" + c.value) > 0;
        }
        if (hit) ++active;
    }
    CHECK(total == 10000);
    const double fraction = double(active) / double(total);
    CHECK(fraction > 0.28);
    CHECK(fraction < 0.32);
}

TEST_CASE("oracle probability evaluates the planted logistic model") {
    GeneratorConfig cfg = GeneratorConfig::defaults();
    cfg.intercept = -3.0;
    cfg.age_coeff = 0.0;
    cfg.sex_coeff = 0.0;

    SUBCASE("no active conditions gives sigma(intercept)") {
        auto h = make_history({}, 40, Sex::F);
        CHECK(oracle_probability(h, cfg) == doctest::Approx(0.04742587317756678).epsilon(1e-12));
    }
    SUBCASE("zero score gives exactly one half") {
        cfg.intercept = 0.0;
        auto h = make_history({}, 40, Sex::F);
        CHECK(oracle_probability(h, cfg) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("one active condition: sigma(intercept + log_odds)") {
        cfg.profiles[0].log_odds = 2.0; // score = -3 + 2 = -1
        auto h = make_history({make_claim("2020-01-05", {cfg.profiles[0].dx_pool[0].value})});
        CHECK(oracle_probability(h, cfg) == doctest::Approx(0.2689414213699951).epsilon(1e-12));
    }
    SUBCASE("adding a positive-log-odds condition never decreases the probability") {
        for (std::size_t p = 0; p < cfg.profiles.size(); ++p) {
            if (cfg.profiles[p].log_odds <= 0.0) continue;
            auto base = make_history({make_claim("2020-01-05", {"T100"})}, 50, Sex::M);
            auto more = base;
            more.claims.push_back(make_claim("2020-02-01", {cfg.profiles[p].dx_pool[0].value}));
            CHECK(oracle_probability(more, cfg) >= oracle_probability(base, cfg));
        }
    }
    SUBCASE("codes outside the generator universe are rejected") {
        auto h = make_history({make_claim("2020-01-05", {"Q999"})});
        CHECK_THROWS_AS(oracle_probability(h, cfg), Error);
    }
}

TEST_CASE("cohort label rate matches the mean oracle probability and the 15% target") {
    GeneratorConfig cfg = GeneratorConfig::defaults();
    cfg.n_patients = 50000;
    const auto records = generate_labeled_cohort(cfg);
    REQUIRE(records.size() == 50000);

    const Oracle oracle(cfg);
    int hospitalized = 0;
    double oracle_sum = 0.0;
    for (const auto& r : records) {
        const auto label = derive_label(r.claims, *r.anchor_date, {"U071"});
        CHECK(label != LabelOutcome::Indeterminate);
        if (label == LabelOutcome::Hospitalized) ++hospitalized;
        oracle_sum += oracle.probability(r);
    }
    const double rate = double(hospitalized) / double(records.size());
    const double mean_oracle = oracle_sum / double(records.size());
    CHECK(std::abs(rate - 0.15) < 0.01);
    CHECK(std::abs(rate - mean_oracle) < 0.01);

    SUBCASE("anchored records filter cleanly and stay attributable") {
        for (int i = 0; i < 50; ++i) {
            auto filtered = apply_leakage_filter(records[static_cast<std::size_t>(i)]);
            CHECK(oracle.probability(filtered) ==
                  doctest::Approx(oracle.probability(records[static_cast<std::size_t>(i)]))
                      .epsilon(1e-12));
        }
    }
}

TEST_CASE("zero log-odds and demographics give rate sigma(intercept)") {
    GeneratorConfig cfg = GeneratorConfig::defaults();
    for (auto& p : cfg.profiles) p.log_odds = 0.0;
    cfg.age_coeff = 0.0;
    cfg.sex_coeff = 0.0;
    cfg.intercept = -1.0;
    cfg.n_patients = 20000;
    int hosp = 0;
    for (const auto& r : generate_labeled_cohort(cfg))
        if (derive_label(r.claims, *r.anchor_date, {"U071"}) == LabelOutcome::Hospitalized) ++hosp;
    CHECK(std::abs(double(hosp) / 20000.0 - sigmoid(-1.0)) < 0.012);
}

TEST_CASE("same-profile codes co-occur within claims far more than cross-profile pairs") {
    GeneratorConfig cfg = GeneratorConfig::defaults();
    cfg.n_pretrain_claims = 10000;

    std::map<std::string, int> profile_of;
    for (std::size_t p = 0; p < cfg.profiles.size(); ++p) {
        for (const auto& c : cfg.profiles[p].dx_pool) profile_of["dx" + c.value] = static_cast<int>(p);
        for (const auto& c : cfg.profiles[p].px_pool) profile_of["px" + c.value] = static_cast<int>(p);
        for (const auto& c : cfg.profiles[p].rx_pool) profile_of["rx" + c.value] = static_cast<int>(p);
    }
    long long same = 0, cross = 0;
    long long claims_counted = 0;
    for (const auto& h : generate_pretrain_corpus(cfg)) {
        for (const auto& claim : h.claims) {
            ++claims_counted;
            std::vector<int> profiles; // one entry per pool-code occurrence
            auto note = [&](const MedicalCode& c) {
                auto it = profile_of.find(std::string(system_tag(c.system)) + c.value);
                if (it != profile_of.end()) profiles.push_back(it->second);
            };
            for (const auto& c : claim.dx) note(c);
            for (const auto& c : claim.px) note(c);
            for (const auto& c : claim.rx) note(c);
            for (std::size_t a = 0; a < profiles.size(); ++a)
                for (std::size_t b = a + 1; b < profiles.size(); ++b)
                    (profiles[a] == profiles[b] ? same : cross) += 1;
        }
    }
    CHECK(claims_counted > 9500); // target is approximate: ~10 claims per patient
    // 40 profiles: a uniform mix would put ~1/40 of pairs on the diagonal
    CHECK(same > cross);
}
