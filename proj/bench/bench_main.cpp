// Compares the serial and OpenMP paths of the compute kernels on a
// small synthetic workload and prints a timing table.

#include <chrono>
#include <cstdio>
#include <functional>

#include <omp.h>

#include "clem/embedding.hpp"
#include "clem/eval/stability.hpp"
#include "clem/models/gbm.hpp"
#include "clem/models/transformer.hpp"
#include "clem/pipeline.hpp"
#include "clem/rng.hpp"
#include "clem/synthgen.hpp"

using namespace clem;

namespace {

double time_ms(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void row(const char* name, double serial_ms, double parallel_ms, int threads) {
    std::printf("%-28s %10.1f ms %10.1f ms   x%.2f (%d threads)\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms, threads);
}

} // namespace

int main() {
    const int threads = omp_get_max_threads();
    std::printf("kernel                        serial        OpenMP      speedup\n");

    GeneratorConfig gen = GeneratorConfig::defaults();
    gen.n_pretrain_claims = 30000;
    gen.n_patients = 4000;
    const auto corpus = generate_pretrain_corpus(gen);
    const auto vocab = Vocabulary::build(corpus, 5);

    std::vector<ClaimSequence> seqs;
    std::uint64_t counter = 0;
    for (const auto& h : corpus)
        for (const auto& c : h.claims)
            seqs.push_back(tokenize_claim(c, h.age_years, h.sex, vocab, mix_seed(1, counter++)));

    CbowConfig cbow;
    cbow.epochs = 1;
    cbow.dim = 64;
    EmbeddingTable table(vocab.size(), cbow.dim);
    {
        CbowConfig serial = cbow;
        serial.threads = 1;
        CbowConfig par = cbow;
        par.threads = threads;
        double ts = time_ms([&] { table = train_cbow(seqs, vocab, serial); });
        double tp = time_ms([&] { (void)train_cbow(seqs, vocab, par); });
        row("cbow epoch (hogwild)", ts, tp, threads);
    }

    {
        std::vector<std::int32_t> queries;
        for (std::int32_t id = 0; id < vocab.size() && queries.size() < 400; ++id)
            if (is_code_kind(vocab.kind(id))) queries.push_back(id);
        double ts = time_ms([&] { (void)nearest_many(queries, table, vocab, true, 1); });
        double tp = time_ms([&] { (void)nearest_many(queries, table, vocab, true, threads); });
        row("nearest-neighbor batch", ts, tp, threads);
    }

    {
        Rng rng(5);
        Matrix X;
        X.rows = 20000;
        X.cols = 60;
        X.data.resize(X.rows * X.cols);
        for (auto& v : X.data) v = rng.next_double();
        std::vector<int> y(X.rows);
        for (std::size_t i = 0; i < X.rows; ++i)
            y[i] = rng.bernoulli(sigmoid(4.0 * (X.at(i, 3) - 0.5) + 2.0 * (X.at(i, 7) - 0.5))) ? 1 : 0;
        GbmConfig gc;
        gc.n_trees = 20;
        GbmConfig gs = gc;
        gs.threads = 1;
        GbmConfig gp = gc;
        gp.threads = threads;
        double ts = time_ms([&] { (void)train_gbm_core(X, y, gs); });
        double tp = time_ms([&] { (void)train_gbm_core(X, y, gp); });
        row("gbm split search", ts, tp, threads);
    }

    {
        TransformerConfig tc;
        tc.layers = 2;
        tc.dim = 32;
        tc.ffn = 128;
        tc.heads = 4;
        tc.pretrain_epochs = 1;
        tc.pretrain_max_sequences = 2000;
        TransformerConfig ts_cfg = tc;
        ts_cfg.threads = 1;
        TransformerConfig tp_cfg = tc;
        tp_cfg.threads = threads;
        double ts = time_ms([&] { (void)pretrain_mlm(seqs, vocab, ts_cfg); });
        double tp = time_ms([&] { (void)pretrain_mlm(seqs, vocab, tp_cfg); });
        row("mlm pretrain steps", ts, tp, threads);
    }

    {
        auto vocab_ptr = std::make_shared<Vocabulary>(vocab);
        auto table_ptr = std::make_shared<EmbeddingTable>(table);
        GbmConfig gc;
        gc.n_trees = 30;
        gc.threads = threads;
        gen.n_patients = 2000;
        auto cohort_raw = generate_labeled_cohort(gen);
        std::vector<LabeledExample> examples;
        CohortStats stats;
        {
            const std::string tmp = "/tmp/clem_bench_cohort.jsonl";
            save_claims_corpus(cohort_raw, tmp);
            examples = load_labeled_cohort(tmp, {"U071"}, &stats);
        }
        std::vector<std::size_t> all(examples.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        auto model = EmbedGbmModel::train(examples, all, vocab_ptr, table_ptr,
                                          AgeBucketTable::defaults(), gc);
        std::vector<PatientHistory> histories;
        for (std::size_t i = 0; i < 300; ++i) histories.push_back(examples[i].history);
        Perturber perturber(table_ptr, vocab_ptr, threads);
        StabilityConfig sc;
        sc.n_samples = 300;
        sc.lime.n_samples = 200;
        StabilityConfig ss = sc;
        ss.threads = 1;
        StabilityConfig sp = sc;
        sp.threads = threads;
        double ts = time_ms([&] { (void)stability_eval(model, histories, perturber, ss); });
        double tp = time_ms([&] { (void)stability_eval(model, histories, perturber, sp); });
        row("stability pairs + LIME", ts, tp, threads);
    }

    return 0;
}
