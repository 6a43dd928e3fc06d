#pragma once

#include <optional>
#include <set>
#include <string>

#include "clem/embedding.hpp"
#include "clem/eval/metrics.hpp"
#include "clem/eval/sanity.hpp"
#include "clem/eval/stability.hpp"
#include "clem/models/serialize.hpp"
#include "clem/synthgen.hpp"

namespace clem {

/// One JSON document configures every stage; stage seeds derive from the
/// global seed, so overriding it re-seeds the whole pipeline.
struct PipelineConfig {
    std::uint64_t seed = 42;
    int threads = 2;
    bool deterministic = true; // forces single-threaded CBOW updates

    struct Paths {
        std::string pretrain_corpus = "data/pretrain.jsonl";
        std::string cohort = "data/cohort.jsonl";
        std::string vocab = "data/vocab.tsv";
        std::string embeddings = "data/embeddings.clem";
        std::string risk_map; // empty: built-in default map
        std::string models_dir = "models";
        std::string reports_dir = "reports";
    } paths;

    std::set<std::string> covid_codes = {"U071"};
    std::vector<int> age_bucket_upper_bounds = {2, 5, 13, 18, 33, 48, 64, 78};

    GeneratorConfig generator;
    int vocab_min_count = 5;
    CbowConfig cbow;
    SplitSpec split;
    LogitConfig logit;
    SvmConfig svm;
    GbmConfig gbm;
    TransformerConfig transformer;
    LimeConfig lime;
    StabilityConfig stability;
    SanityConfig sanity;

    static PipelineConfig defaults();
    static PipelineConfig load(const std::string& path);
    void save(const std::string& path) const;

    AgeBucketTable buckets() const { return AgeBucketTable(age_bucket_upper_bounds); }

    /// Applies the global seed/threads/deterministic knobs to every
    /// per-module config (derived stage seeds, thread counts).
    void finalize();
};

/// Pipeline stages shared by the CLI and the acceptance suite. Each
/// writes exactly its declared outputs and never mutates its inputs.
void run_gen_data(const PipelineConfig& cfg);
void run_build_vocab(const PipelineConfig& cfg);
void run_train_embeddings(const PipelineConfig& cfg);
void run_pretrain_mlm(const PipelineConfig& cfg);
void run_train_model(const PipelineConfig& cfg, ModelKind kind);

struct EvaluateResult {
    std::string model;
    MetricsReport metrics;
    double auc = 0.0;
};
std::vector<EvaluateResult> run_evaluate(const PipelineConfig& cfg,
                                         const std::vector<ModelKind>& kinds,
                                         const std::string& out_path = "");

StabilityReport run_stability(const PipelineConfig& cfg, ModelKind kind,
                              const std::string& out_path = "");
SanityResult run_sanity(const PipelineConfig& cfg, const std::vector<ModelKind>& kinds,
                        const std::string& out_path = "");
Explanation run_explain(const PipelineConfig& cfg, ModelKind kind, std::size_t test_index);
std::vector<std::pair<std::string, double>> run_nearest(const PipelineConfig& cfg,
                                                        const std::string& token, int k);

/// Loads whatever shared artifacts exist under the config paths.
ModelArtifacts load_artifacts(const PipelineConfig& cfg, bool need_vocab, bool need_table);
std::string model_base_path(const PipelineConfig& cfg, ModelKind kind);
std::shared_ptr<const RiskFactorMap> load_risk_map(const PipelineConfig& cfg);

/// Labeled cohort plus its split, loaded the same way by every stage.
struct CohortData {
    std::vector<LabeledExample> examples;
    Split split;
    CohortStats stats;
};
CohortData load_cohort_split(const PipelineConfig& cfg);

/// Claim-level pretraining sequences (tokenized, seed-shuffled).
std::vector<ClaimSequence> pretrain_sequences(const PipelineConfig& cfg, const Vocabulary& vocab);

} // namespace clem
