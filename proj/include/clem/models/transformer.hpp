#pragma once

#include <memory>
#include <span>

#include "clem/models/common.hpp"
#include "clem/narrative.hpp"

namespace clem {

struct TransformerConfig {
    int layers = 2;
    int heads = 4;
    int dim = 64; // divisible by heads
    int ffn = 256;
    int max_len = 256;
    double mask_rate = 0.30;
    double pretrain_lr = 1e-3;
    double finetune_lr = 1e-4;
    int pretrain_epochs = 2;
    int finetune_epochs = 3;
    int batch_size = 32;
    double val_fraction = 0.10; // early-stopping fold during fine-tuning
    long pretrain_max_sequences = 0; // 0 = use all
    long finetune_max_examples = 0;  // 0 = use all
    bool freeze_encoder = false;     // fine-tune the head only
    std::uint64_t seed = 23;
    int threads = 1;
};

/// Post-LN transformer encoder (token + learned position embeddings,
/// multi-head self-attention, GELU feed-forward, residual + layer norm)
/// with an MLM decoder head and a sigmoid classification head on the
/// first position. Templated on the scalar so tests can run the full
/// analytic gradient in f64 against finite differences.
template <typename Real>
class Encoder {
  public:
    Encoder(const TransformerConfig& config, std::int32_t vocab_size);

    void init_params(std::uint64_t seed); // normal(0, 0.02), LN gamma = 1

    const TransformerConfig& config() const { return cfg_; }
    std::int32_t vocab_size() const { return vocab_size_; }
    std::size_t n_params() const { return params_.size(); }
    std::vector<Real>& params() { return params_; }
    const std::vector<Real>& params() const { return params_; }

    /// Sum of cross-entropy over selected positions (not averaged).
    double mlm_loss(std::span<const std::int32_t> input_ids,
                    std::span<const std::int32_t> targets,
                    std::span<const std::uint8_t> selected) const;
    /// Same, accumulating `scale * dLoss/dParams` into grads.
    double mlm_loss_grad(std::span<const std::int32_t> input_ids,
                         std::span<const std::int32_t> targets,
                         std::span<const std::uint8_t> selected, Real scale,
                         std::span<Real> grads) const;

    double cls_prob(std::span<const std::int32_t> ids) const;
    double cls_loss(std::span<const std::int32_t> ids, int label) const;
    double cls_loss_grad(std::span<const std::int32_t> ids, int label, Real scale,
                         std::span<Real> grads) const;

  private:
    struct Workspace;
    void forward(std::span<const std::int32_t> ids, Workspace& ws) const;
    void backward(const Workspace& ws, std::span<const std::int32_t> ids, Real scale,
                  std::span<Real> d_hlast, std::span<Real> grads) const;

    TransformerConfig cfg_;
    std::int32_t vocab_size_;
    std::vector<Real> params_;

  public:
    // parameter layout (offsets into params_), fixed at construction
    struct Layout {
        std::size_t tok_emb, pos_emb, ln_e_g, ln_e_b;
        struct Layer {
            std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
            std::size_t ln1_g, ln1_b;
            std::size_t w1, b1, w2, b2;
            std::size_t ln2_g, ln2_b;
        };
        std::vector<Layer> layers;
        std::size_t dec_w, dec_b;
        std::size_t cls_w, cls_b;
        std::size_t total;
    };
    const Layout& layout() const { return layout_; }

  private:
    Layout layout_;
};

using EncoderF = Encoder<float>;
using EncoderD = Encoder<double>;

/// 80/10/10 masking of a token sequence at the configured rate: of the
/// selected positions, 80% become [MASK], 10% a random non-special
/// token, 10% stay unchanged. Loss attaches only to selected positions.
struct MaskedSequence {
    std::vector<std::int32_t> input;
    std::vector<std::int32_t> target;
    std::vector<std::uint8_t> selected;
    int n_selected = 0;
    int n_maskable = 0;
};
MaskedSequence apply_mlm_masking(std::span<const std::int32_t> ids, double mask_rate,
                                 std::int32_t vocab_size, class Rng& rng);

struct MlmPretrainStats {
    std::vector<double> epoch_loss; // mean CE per selected token
    double mask_fraction = 0.0;     // selected / maskable, over the whole run
    long long n_selected = 0;
    long long n_maskable = 0;
};

/// Masked-LM pretraining over claim sequences. Parallelizes over the
/// examples of each batch with a fixed-order gradient reduction, so a
/// given (seed, threads) pair reproduces bitwise.
EncoderF pretrain_mlm(const std::vector<ClaimSequence>& sequences, const Vocabulary& vocab,
                      const TransformerConfig& config, MlmPretrainStats* stats = nullptr);

class MlmClassifierModel final : public Classifier {
  public:
    MlmClassifierModel(std::shared_ptr<const Vocabulary> vocab, AgeBucketTable buckets,
                       EncoderF encoder);

    ModelKind kind() const override { return ModelKind::MlmTransformer; }
    double predict_proba(const PatientHistory& history) const override;

    const EncoderF& encoder() const { return encoder_; }
    const Vocabulary& vocab() const { return *vocab_; }
    const AgeBucketTable& buckets() const { return buckets_; }

  private:
    std::shared_ptr<const Vocabulary> vocab_;
    AgeBucketTable buckets_;
    EncoderF encoder_;
};

struct FinetuneStats {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    int best_epoch = -1;
};

/// Fine-tunes head + encoder with BCE on the [CLS] position, tracking a
/// stratified validation fold and restoring the best epoch.
MlmClassifierModel finetune_classifier(EncoderF encoder,
                                       const std::vector<LabeledExample>& examples,
                                       const std::vector<std::size_t>& train_idx,
                                       std::shared_ptr<const Vocabulary> vocab,
                                       const AgeBucketTable& buckets,
                                       const TransformerConfig& config,
                                       FinetuneStats* stats = nullptr);

} // namespace clem
