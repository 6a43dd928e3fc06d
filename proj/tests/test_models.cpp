#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "clem/error.hpp"
#include "clem/eval/metrics.hpp"
#include "clem/models/logit.hpp"
#include "clem/models/serialize.hpp"
#include "clem/models/svm.hpp"
#include "clem/rng.hpp"
#include "clem/synthgen.hpp"
#include "testutil.hpp"

using namespace clem;
using namespace clem::testutil;

namespace {

/// Labeled toy set: every positive carries the cancer code; negatives
/// rotate through benign codes so no single benign code is predictive.
std::vector<LabeledExample> separable_examples(int n_pos, int n_neg) {
    static const char* benign[] = {"T100", "T101", "T102", "T103", "T104"};
    std::vector<LabeledExample> out;
    for (int i = 0; i < n_pos; ++i)
        out.push_back({make_history({make_claim("2020-01-05",
                                                {"C341", benign[i % 5]})},
                                    50, Sex::F),
                       Label::Hospitalized});
    for (int i = 0; i < n_neg; ++i)
        out.push_back({make_history({make_claim("2020-01-05", {benign[i % 5]})}, 50, Sex::F),
                       Label::NotHospitalized});
    return out;
}

std::vector<LabeledExample> synthetic_cohort(int n_patients, std::uint64_t seed = 42) {
    GeneratorConfig gen = GeneratorConfig::defaults();
    gen.n_patients = n_patients;
    gen.seed = seed;
    const std::string path = "/tmp/clem_models_cohort.jsonl";
    save_claims_corpus(generate_labeled_cohort(gen), path);
    return load_labeled_cohort(path, {"U071"}, nullptr);
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("stratified split: 10 examples (3 positive) at 0.7 give a 7/3 split, 2 positives in train") {
    auto examples = separable_examples(3, 7);
    SplitSpec spec;
    spec.seed = 5;
    auto split = split_train_test(examples, spec);
    CHECK(split.train.size() == 7);
    CHECK(split.test.size() == 3);
    int pos_train = 0;
    for (auto i : split.train)
        if (examples[i].label == Label::Hospitalized) ++pos_train;
    CHECK(pos_train == 2);

    SUBCASE("same seed reproduces the split; different seed moves it") {
        auto again = split_train_test(examples, spec);
        CHECK(again.train == split.train);
        CHECK(again.test == split.test);
    }
    SUBCASE("disjoint and exhaustive") {
        std::set<std::size_t> seen(split.train.begin(), split.train.end());
        for (auto i : split.test) CHECK(seen.insert(i).second);
        CHECK(seen.size() == examples.size());
    }
    SUBCASE("degenerate fractions are rejected") {
        spec.train_fraction = 1.0;
        CHECK_THROWS_AS(split_train_test(examples, spec), ConfigError);
        spec.train_fraction = 0.0;
        CHECK_THROWS_AS(split_train_test(examples, spec), ConfigError);
    }
    SUBCASE("a class with fewer than 2 examples cannot be stratified") {
        auto tiny = separable_examples(1, 5);
        CHECK_THROWS_AS(split_train_test(tiny, spec), Error);
    }
}

TEST_CASE("risk-logit learns a separable toy set with a positive cancer weight") {
    auto examples = separable_examples(40, 60);
    LogitConfig cfg;
    TrainReport rep;
    auto model = RiskLogitModel::train(examples, all_indices(examples.size()), default_risk_map(),
                                       AgeBucketTable::defaults(), cfg, &rep);
    int correct = 0;
    for (const auto& ex : examples) {
        const double p = model.predict_proba(ex.history);
        if ((p >= 0.5) == (ex.label == Label::Hospitalized)) ++correct;
    }
    CHECK(correct == 100);
    int cancer_idx = -1;
    for (std::size_t i = 0; i < default_risk_map().names().size(); ++i)
        if (default_risk_map().names()[i] == "cancer") cancer_idx = static_cast<int>(i);
    CHECK(model.weights()[static_cast<std::size_t>(cancer_idx)] > 0.0);
}

TEST_CASE("all-zero features collapse to an intercept-only fit at the base rate") {
    std::vector<LabeledExample> examples;
    for (int i = 0; i < 70; ++i)
        examples.push_back({make_history({}, 0, Sex::F), Label::NotHospitalized});
    for (int i = 0; i < 30; ++i)
        examples.push_back({make_history({}, 0, Sex::F), Label::Hospitalized});
    auto model = RiskLogitModel::train(examples, all_indices(examples.size()), default_risk_map(),
                                       AgeBucketTable::defaults(), LogitConfig{});
    CHECK(model.predict_proba(examples[0].history) == doctest::Approx(0.3).epsilon(1e-3));
}

TEST_CASE("logistic loss gradient matches central finite differences below 1e-6") {
    Rng rng(99);
    const std::size_t n = 40, d = 7;
    std::vector<std::vector<double>> X(n, std::vector<double>(d));
    std::vector<int> y(n);
    for (auto& row : X)
        for (auto& v : row) v = rng.normal();
    for (auto& v : y) v = rng.bernoulli(0.4) ? 1 : 0;
    std::vector<double> w(d);
    for (auto& v : w) v = rng.normal() * 0.3;
    double bias = rng.normal() * 0.1;
    const double l2 = 1e-3;

    std::vector<double> grad(d), scratch(d);
    double gb = 0, gb_s = 0;
    (void)logit_loss_grad(X, y, w, bias, l2, grad, gb);

    const double h = 1e-6;
    auto loss_for = [&](double delta_b) {
        return logit_loss_grad(X, y, w, bias + delta_b, l2, scratch, gb_s);
    };
    double fd_b = (loss_for(h) - loss_for(-h)) / (2 * h);
    CHECK(std::abs(fd_b - gb) / std::max({std::abs(fd_b), std::abs(gb), 1e-10}) < 1e-6);
    for (std::size_t j = 0; j < d; ++j) {
        w[j] += h;
        const double lp = logit_loss_grad(X, y, w, bias, l2, scratch, gb_s);
        w[j] -= 2 * h;
        const double lm = logit_loss_grad(X, y, w, bias, l2, scratch, gb_s);
        w[j] += h;
        const double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - grad[j]) / std::max({std::abs(fd), std::abs(grad[j]), 1e-10}) < 1e-6);
    }
}

TEST_CASE("bow-svm: a perfectly predictive code earns the largest weight magnitude") {
    auto examples = separable_examples(50, 70);
    auto vocab = std::make_shared<Vocabulary>(Vocabulary::build(
        [&] {
            std::vector<PatientHistory> hs;
            for (const auto& e : examples) hs.push_back(e.history);
            return hs;
        }(),
        1));
    SvmConfig cfg;
    auto model = BowSvmModel::train(examples, all_indices(examples.size()), vocab, cfg);
    const auto c341 = vocab->id("DX_C341");
    double max_other = 0;
    for (std::int32_t i = 0; i < vocab->size(); ++i)
        if (i != c341) max_other = std::max(max_other, std::abs(model.weights()[static_cast<std::size_t>(i)]));
    CHECK(std::abs(model.weights()[static_cast<std::size_t>(c341)]) > max_other);
    CHECK(model.weights()[static_cast<std::size_t>(c341)] > 0.0);

    SUBCASE("single-class training sets are rejected") {
        auto one_class = separable_examples(5, 0);
        CHECK_THROWS_AS(
            BowSvmModel::train(one_class, all_indices(one_class.size()), vocab, cfg), Error);
    }
}

TEST_CASE("hinge objective subgradient matches finite differences away from kinks") {
    Rng rng(123);
    const std::size_t n = 30, dim = 12;
    std::vector<std::vector<std::int32_t>> rows(n);
    std::vector<int> y(n);
    for (auto& row : rows) {
        std::set<std::int32_t> s;
        const auto k = 1 + rng.bounded(5);
        for (std::uint64_t i = 0; i < k; ++i) s.insert(static_cast<std::int32_t>(rng.bounded(dim)));
        row.assign(s.begin(), s.end());
    }
    for (auto& v : y) v = rng.bernoulli(0.5) ? 1 : 0;
    std::vector<double> w(dim);
    for (auto& v : w) v = rng.normal() * 0.4;
    double bias = 0.13;
    const double lambda = 1e-3;

    // keep every margin clear of the hinge kink
    for (std::size_t i = 0; i < n; ++i) {
        double z = bias;
        for (auto j : rows[i]) z += w[static_cast<std::size_t>(j)];
        const double yi = y[i] == 1 ? 1.0 : -1.0;
        if (std::abs(1.0 - yi * z) < 1e-3) bias += 5e-3;
    }

    std::vector<double> grad(dim), scratch(dim);
    double gb = 0, gb_s = 0;
    (void)svm_loss_grad(rows, y, w, bias, lambda, grad, gb);
    const double h = 1e-7;
    for (std::size_t j = 0; j < dim; ++j) {
        w[j] += h;
        const double lp = svm_loss_grad(rows, y, w, bias, lambda, scratch, gb_s);
        w[j] -= 2 * h;
        const double lm = svm_loss_grad(rows, y, w, bias, lambda, scratch, gb_s);
        w[j] += h;
        const double fd = (lp - lm) / (2 * h);
        CHECK(std::abs(fd - grad[j]) <= 1e-5 * std::max({std::abs(fd), std::abs(grad[j]), 1.0}));
    }
}

TEST_CASE("platt fit: mean calibrated probability tracks the fold positive rate") {
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 400;
        std::vector<double> margins(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            margins[i] = rng.normal() * 2.0 + 0.3;
            labels[i] = rng.bernoulli(sigmoid(1.3 * margins[i] - 0.8)) ? 1 : 0;
        }
        auto [a, b] = fit_platt(margins, labels);
        double mean_p = 0, rate = 0;
        for (std::size_t i = 0; i < n; ++i) {
            mean_p += 1.0 / (1.0 + std::exp(a * margins[i] + b));
            rate += labels[i];
        }
        mean_p /= double(n);
        rate /= double(n);
        CHECK(std::abs(mean_p - rate) < 0.05);
        CHECK(a < 0.0); // higher margin must mean higher probability
    }
}

TEST_CASE("svm on synthetic data: calibrated, in range, better than chance") {
    auto examples = synthetic_cohort(4000);
    SplitSpec spec;
    auto split = split_train_test(examples, spec);
    auto vocab = std::make_shared<Vocabulary>(Vocabulary::build(
        [&] {
            std::vector<PatientHistory> hs;
            for (const auto& e : examples) hs.push_back(e.history);
            return hs;
        }(),
        5));
    auto model = BowSvmModel::train(examples, split.train, vocab, SvmConfig{});

    std::vector<double> probs;
    std::vector<int> labels;
    for (auto i : split.test) {
        probs.push_back(model.predict_proba(examples[i].history));
        labels.push_back(examples[i].label == Label::Hospitalized ? 1 : 0);
    }
    for (double p : probs) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    const double auc = auc_score(probs, labels);
    MESSAGE("svm test AUC on 4k synthetic cohort: ", auc);
    CHECK(auc > 0.70);

    double mean_p = 0, rate = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        mean_p += probs[i];
        rate += labels[i];
    }
    CHECK(std::abs(mean_p / double(probs.size()) - rate / double(probs.size())) < 0.08);
}

TEST_CASE("logit and svm artifacts round-trip bit-exactly and predict identically") {
    auto examples = synthetic_cohort(1500, 77);
    auto idx = all_indices(examples.size());
    auto vocab = std::make_shared<Vocabulary>(Vocabulary::build(
        [&] {
            std::vector<PatientHistory> hs;
            for (const auto& e : examples) hs.push_back(e.history);
            return hs;
        }(),
        2));

    ModelArtifacts art;
    art.vocab = vocab;
    art.risk_map = std::shared_ptr<const RiskFactorMap>(&default_risk_map(), [](auto*) {});

    auto logit = RiskLogitModel::train(examples, idx, default_risk_map(),
                                       AgeBucketTable::defaults(), LogitConfig{});
    save_model(logit, "/tmp/clem_logit");
    auto logit2 = load_model("/tmp/clem_logit", art);
    auto svm = BowSvmModel::train(examples, idx, vocab, SvmConfig{});
    save_model(svm, "/tmp/clem_svm");
    auto svm2 = load_model("/tmp/clem_svm", art);

    for (int i = 0; i < 200; ++i) {
        const auto& h = examples[static_cast<std::size_t>(i)].history;
        CHECK(logit.predict_proba(h) == logit2->predict_proba(h));
        CHECK(svm.predict_proba(h) == svm2->predict_proba(h));
    }

    // save(load(x)) is byte-identical to save(x)
    save_model(*svm2, "/tmp/clem_svm_again");
    CHECK(file_bytes("/tmp/clem_svm.clmp") == file_bytes("/tmp/clem_svm_again.clmp"));

    SUBCASE("vocabulary size mismatch is a version error") {
        ModelArtifacts bad = art;
        std::vector<PatientHistory> tiny = {examples[0].history};
        bad.vocab = std::make_shared<Vocabulary>(Vocabulary::build(tiny, 1));
        CHECK_THROWS_AS(load_model("/tmp/clem_svm", bad), VersionError);
    }
}
