#pragma once

#include <memory>
#include <span>

#include "clem/embedding.hpp"
#include "clem/models/common.hpp"

namespace clem {

struct GbmConfig {
    int n_trees = 100;
    int max_depth = 3;
    double learning_rate = 0.1;
    int min_samples_leaf = 20;
    double subsample = 1.0; // fraction of rows per tree, without replacement
    std::uint64_t seed = 17;
    int threads = 1;
};

struct GbmNode {
    std::int32_t feature = -1; // -1: leaf
    float threshold = 0.0f;    // x[feature] <= threshold goes left
    std::int32_t left = -1;
    std::int32_t right = -1;
    float value = 0.0f; // leaf output (already shrunk)
};

struct GbmTree {
    std::vector<GbmNode> nodes; // nodes[0] is the root
};

/// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct GbmCore {
    float f0 = 0.0f; // initial log-odds
    std::vector<GbmTree> trees;
    std::vector<double> train_loss_path; // mean logloss after each stage
};

/// Gradient boosting on the logistic loss: each stage fits a
/// depth-limited regression tree to the residual y - p by exact greedy
/// split search (presorted features), leaf values are Newton steps
/// shrunk by the learning rate. Split search parallelizes over
/// features; results are independent of the thread count.
GbmCore train_gbm_core(const Matrix& X, const std::vector<int>& y, const GbmConfig& config);

double gbm_margin(const GbmCore& core, std::span<const double> x);

/// Best depth-1 split of a response on a feature matrix: returns
/// (feature, threshold, gain); gain is the SSE reduction. Exposed so
/// tests can compare against an exhaustive oracle.
struct SplitChoice {
    std::int32_t feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};
SplitChoice best_stump_split(const Matrix& X, std::span<const double> response,
                             int min_samples_leaf, int threads = 1);

/// GBM over [mean Dx | mean Px | mean Rx | age | sex] embedding features.
class EmbedGbmModel final : public Classifier {
  public:
    EmbedGbmModel(std::shared_ptr<const Vocabulary> vocab,
                  std::shared_ptr<const EmbeddingTable> table, AgeBucketTable buckets,
                  GbmCore core);

    static EmbedGbmModel train(const std::vector<LabeledExample>& examples,
                               const std::vector<std::size_t>& train_idx,
                               std::shared_ptr<const Vocabulary> vocab,
                               std::shared_ptr<const EmbeddingTable> table,
                               const AgeBucketTable& buckets, const GbmConfig& config,
                               TrainReport* report = nullptr);

    ModelKind kind() const override { return ModelKind::EmbedGbm; }
    double predict_proba(const PatientHistory& history) const override;

    const GbmCore& core() const { return core_; }
    const Vocabulary& vocab() const { return *vocab_; }
    const EmbeddingTable& table() const { return *table_; }
    const AgeBucketTable& buckets() const { return buckets_; }

  private:
    std::shared_ptr<const Vocabulary> vocab_;
    std::shared_ptr<const EmbeddingTable> table_;
    AgeBucketTable buckets_;
    GbmCore core_;
};

} // namespace clem
