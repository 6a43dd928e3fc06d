#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clem/narrative.hpp"

namespace clem {

struct CbowConfig {
    int dim = 64; // 1000 reproduces the paper's scale
    int window = 10;
    int negatives = 5;
    double learning_rate = 0.05; // linear decay to 1e-4 of this
    int epochs = 5;
    std::uint64_t seed = 1;
    int threads = 1; // 1 = deterministic; >1 = lock-free parallel updates
};

/// Learned input vectors, one row per vocabulary token.
class EmbeddingTable {
  public:
    EmbeddingTable(std::int32_t vocab_size, int dim);

    int dim() const { return dim_; }
    std::int32_t rows() const { return rows_; }
    std::span<const float> row(std::int32_t id) const {
        return {data_.data() + static_cast<std::size_t>(id) * dim_, static_cast<std::size_t>(dim_)};
    }
    std::span<float> row_mut(std::int32_t id) {
        return {data_.data() + static_cast<std::size_t>(id) * dim_, static_cast<std::size_t>(dim_)};
    }
    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

    double cosine(std::int32_t a, std::int32_t b) const;

    /// Binary format: magic "CLEM", u32 version=1, u32 vocab_size,
    /// u32 dim, then the row-major little-endian f32 matrix.
    void save(const std::string& path) const;
    static EmbeddingTable load(const std::string& path);

  private:
    std::int32_t rows_;
    int dim_;
    std::vector<float> data_;
};

struct CbowTrainStats {
    std::vector<double> epoch_loss; // mean negative-sampling NLL per epoch
    std::int64_t positions = 0;
};

/// CBOW with negative sampling over claim sequences. Context is up to
/// `window` tokens on each side within the same sequence; the center is
/// predicted from the mean of the context input vectors. threads == 1
/// is bitwise deterministic; threads > 1 shards sequences across
/// lock-free workers (word2vec-style) and is not run-reproducible.
EmbeddingTable train_cbow(const std::vector<ClaimSequence>& sequences, const Vocabulary& vocab,
                          const CbowConfig& config, CbowTrainStats* stats = nullptr);

/// One negative-sampling step on explicit (center, contexts, negatives):
/// loss plus analytic gradients, templated so tests can run it in f64
/// against finite differences. `ctx` holds the context input vectors
/// (row-major n_ctx x dim), `center_out` / `neg_out` the output vectors.
/// Gradients are written to the *_grad spans (same shapes).
template <typename Real>
Real cbow_step_loss_grad(std::span<const Real> ctx, int n_ctx, std::span<const Real> center_out,
                         std::span<const Real> neg_out, int n_neg, int dim,
                         std::span<Real> ctx_grad, std::span<Real> center_grad,
                         std::span<Real> neg_grad);

/// Nearest same-kind code token by cosine similarity, excluding the
/// query itself and all special/demographic tokens. Ties break toward
/// the lower token id. same_system=false widens candidates to all code
/// tokens. Throws Error when no candidate exists.
std::int32_t nearest_code(std::int32_t query, const EmbeddingTable& table, const Vocabulary& vocab,
                          bool same_system = true);

/// Batch nearest-neighbor queries; iterations are independent, so the
/// parallel path returns exactly the serial result.
std::vector<std::int32_t> nearest_many(std::span<const std::int32_t> queries,
                                       const EmbeddingTable& table, const Vocabulary& vocab,
                                       bool same_system = true, int threads = 1);

/// [mean Dx | mean Px | mean Rx | age bucket ordinal | sex(M=1)],
/// length 3*dim + 2. Every code occurrence contributes (duplicates
/// count); an empty code type yields a zero segment.
std::vector<double> featurize_history(const PatientHistory& history, const EmbeddingTable& table,
                                      const Vocabulary& vocab,
                                      const AgeBucketTable& buckets = AgeBucketTable::defaults());

} // namespace clem
