#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "clem/error.hpp"
#include "clem/eval/metrics.hpp"
#include "clem/models/gbm.hpp"
#include "clem/models/serialize.hpp"
#include "clem/rng.hpp"
#include "clem/synthgen.hpp"
#include "testutil.hpp"

using namespace clem;
using namespace clem::testutil;

namespace {

Matrix random_matrix(Rng& rng, std::size_t n, std::size_t d) {
    Matrix X;
    X.rows = n;
    X.cols = d;
    X.data.resize(n * d);
    for (auto& v : X.data) v = rng.normal();
    return X;
}

/// Exhaustive depth-1 oracle: every feature, every adjacent midpoint,
/// SSE reduction computed from scratch.
SplitChoice stump_oracle(const Matrix& X, std::span<const double> r, int min_leaf) {
    SplitChoice best;
    double total = 0;
    for (double v : r) total += v;
    const double n = double(X.rows);
    bool found = false;
    for (std::size_t f = 0; f < X.cols; ++f) {
        std::vector<std::pair<double, std::size_t>> vals;
        for (std::size_t i = 0; i < X.rows; ++i) vals.emplace_back(X.at(i, f), i);
        std::stable_sort(vals.begin(), vals.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        double left_sum = 0;
        for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
            left_sum += r[vals[k].second];
            if (vals[k].first == vals[k + 1].first) continue;
            const double nl = double(k + 1), nr = n - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            const double sl = left_sum, sr = total - left_sum;
            const double gain = sl * sl / nl + sr * sr / nr - total * total / n;
            const double thr = (vals[k].first + vals[k + 1].first) / 2.0;
            const bool better = !found || gain > best.gain ||
                                (gain == best.gain && (static_cast<std::int32_t>(f) < best.feature ||
                                                       (static_cast<std::int32_t>(f) == best.feature &&
                                                        thr < best.threshold)));
            if (better && gain > 0.0) {
                best = {static_cast<std::int32_t>(f), thr, gain};
                found = true;
            }
        }
    }
    return best;
}

} // namespace

TEST_CASE("depth-1 split equals the exhaustive oracle on 50 random toy datasets") {
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 30 + rng.bounded(120);
        const std::size_t d = 2 + rng.bounded(12);
        Matrix X = random_matrix(rng, n, d);
        std::vector<double> r(n);
        for (auto& v : r) v = rng.normal();
        const int min_leaf = 1 + static_cast<int>(rng.bounded(8));

        const auto mine = best_stump_split(X, r, min_leaf, 2);
        const auto oracle = stump_oracle(X, r, min_leaf);
        CHECK(mine.feature == oracle.feature);
        if (oracle.feature >= 0) {
            CHECK(mine.threshold == doctest::Approx(oracle.threshold).epsilon(1e-12));
            CHECK(mine.gain == doctest::Approx(oracle.gain).epsilon(1e-9));
        }
    }
}

TEST_CASE("a single depth-1 tree picks the perfectly splitting feature") {
    Rng rng(55);
    const std::size_t n = 200;
    Matrix X = random_matrix(rng, n, 6);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = X.at(i, 3) > 0.2 ? 1 : 0;
    GbmConfig cfg;
    cfg.n_trees = 1;
    cfg.max_depth = 1;
    cfg.min_samples_leaf = 5;
    const auto core = train_gbm_core(X, y, cfg);
    REQUIRE(core.trees.size() == 1);
    REQUIRE(core.trees[0].nodes[0].feature >= 0);
    CHECK(core.trees[0].nodes[0].feature == 3);
    // and it matches the stump oracle on the stage-0 residuals
    const double p0 = sigmoid(double(core.f0));
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - p0;
    const auto oracle = stump_oracle(X, resid, cfg.min_samples_leaf);
    CHECK(core.trees[0].nodes[0].feature == oracle.feature);
    CHECK(core.trees[0].nodes[0].threshold == float(oracle.threshold));
}

TEST_CASE("staged training loss is monotone non-increasing on random datasets") {
    Rng rng(81);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 150 + rng.bounded(300);
        const std::size_t d = 4 + rng.bounded(6);
        Matrix X = random_matrix(rng, n, d);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = rng.bernoulli(sigmoid(1.5 * X.at(i, 0) - 0.8 * X.at(i, 1) +
                                         0.3 * rng.normal()))
                       ? 1
                       : 0;
        GbmConfig cfg;
        cfg.n_trees = 40;
        cfg.min_samples_leaf = 5;
        const auto core = train_gbm_core(X, y, cfg);
        REQUIRE(core.train_loss_path.size() == 41);
        for (std::size_t m = 1; m < core.train_loss_path.size(); ++m)
            CHECK(core.train_loss_path[m] <= core.train_loss_path[m - 1] + 1e-9);
    }
}

TEST_CASE("zero trees fall back to the base-rate log odds") {
    Rng rng(7);
    Matrix X = random_matrix(rng, 100, 3);
    std::vector<int> y(100, 0);
    for (std::size_t i = 0; i < 30; ++i) y[i] = 1;
    GbmConfig cfg;
    cfg.n_trees = 0;
    const auto core = train_gbm_core(X, y, cfg);
    CHECK(core.trees.empty());
    CHECK(sigmoid(gbm_margin(core, X.row(0))) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("subsampling and threads do not break determinism for a fixed config") {
    Rng rng(19);
    Matrix X = random_matrix(rng, 400, 8);
    std::vector<int> y(400);
    for (std::size_t i = 0; i < 400; ++i) y[i] = rng.bernoulli(sigmoid(X.at(i, 2))) ? 1 : 0;
    GbmConfig cfg;
    cfg.n_trees = 10;
    cfg.subsample = 0.7;
    const auto a = train_gbm_core(X, y, cfg);
    const auto b = train_gbm_core(X, y, cfg);
    REQUIRE(a.trees.size() == b.trees.size());
    for (std::size_t t = 0; t < a.trees.size(); ++t) {
        REQUIRE(a.trees[t].nodes.size() == b.trees[t].nodes.size());
        for (std::size_t k = 0; k < a.trees[t].nodes.size(); ++k) {
            CHECK(a.trees[t].nodes[k].feature == b.trees[t].nodes[k].feature);
            CHECK(a.trees[t].nodes[k].threshold == b.trees[t].nodes[k].threshold);
            CHECK(a.trees[t].nodes[k].value == b.trees[t].nodes[k].value);
        }
    }
}

TEST_CASE("embed-gbm trains on synthetic data, tracks the oracle, round-trips") {
    GeneratorConfig gen = GeneratorConfig::defaults();
    gen.n_patients = 4000;
    gen.n_pretrain_claims = 30000;
    const std::string path = "/tmp/clem_gbm_cohort.jsonl";
    save_claims_corpus(generate_labeled_cohort(gen), path);
    auto examples = load_labeled_cohort(path, {"U071"}, nullptr);
    auto split = split_train_test(examples, SplitSpec{});

    const auto corpus = generate_pretrain_corpus(gen);
    auto vocab = std::make_shared<Vocabulary>(Vocabulary::build(corpus, 5));
    std::vector<ClaimSequence> seqs;
    std::uint64_t counter = 0;
    for (const auto& h : corpus)
        for (const auto& c : h.claims)
            seqs.push_back(tokenize_claim(c, h.age_years, h.sex, *vocab, mix_seed(3, counter++)));
    CbowConfig cbow;
    cbow.dim = 32;
    cbow.threads = 2;
    auto table = std::make_shared<EmbeddingTable>(train_cbow(seqs, *vocab, cbow));

    GbmConfig cfg;
    cfg.threads = 2;
    auto model = EmbedGbmModel::train(examples, split.train, vocab, table,
                                      AgeBucketTable::defaults(), cfg);

    std::vector<double> probs;
    std::vector<int> labels;
    const Oracle oracle(gen);
    double abs_err_sum = 0;
    for (auto i : split.test) {
        const double p = model.predict_proba(examples[i].history);
        probs.push_back(p);
        labels.push_back(examples[i].label == Label::Hospitalized ? 1 : 0);
        abs_err_sum += std::abs(p - oracle.probability(examples[i].history));
    }
    const double auc = auc_score(probs, labels);
    MESSAGE("embed-gbm AUC at 4k patients: ", auc);
    CHECK(auc > 0.75);
    CHECK(abs_err_sum / double(probs.size()) < 0.15); // mean |predict - oracle|

    SUBCASE("artifact round trip preserves every prediction") {
        save_model(model, "/tmp/clem_gbm_model");
        ModelArtifacts art;
        art.vocab = vocab;
        art.table = table;
        auto loaded = load_model("/tmp/clem_gbm_model", art);
        for (int i = 0; i < 100; ++i) {
            const auto& h = examples[static_cast<std::size_t>(i)].history;
            CHECK(model.predict_proba(h) == loaded->predict_proba(h));
        }
        save_model(*loaded, "/tmp/clem_gbm_model2");
        std::ifstream a("/tmp/clem_gbm_model.clmp", std::ios::binary);
        std::ifstream b("/tmp/clem_gbm_model2.clmp", std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }
}
