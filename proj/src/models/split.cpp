#include <algorithm>
#include <cmath>

#include "clem/error.hpp"
#include "clem/models/common.hpp"
#include "clem/rng.hpp"

namespace clem {

const char* model_kind_tag(ModelKind k) {
    switch (k) {
        case ModelKind::RiskLogit: return "risk-logit";
        case ModelKind::BowSvm: return "bow-svm";
        case ModelKind::EmbedGbm: return "embed-gbm";
        case ModelKind::MlmTransformer: return "mlm";
    }
    return "?";
}

ModelKind model_kind_from_tag(std::string_view tag) {
    if (tag == "risk-logit") return ModelKind::RiskLogit;
    if (tag == "bow-svm") return ModelKind::BowSvm;
    if (tag == "embed-gbm") return ModelKind::EmbedGbm;
    if (tag == "mlm") return ModelKind::MlmTransformer;
    throw ConfigError("unknown model kind: '" + std::string(tag) + "'");
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.bounded(i)]);
}

std::size_t train_count(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::floor(fraction * double(n) + 0.5));
}

} // namespace

Split split_train_test(const std::vector<LabeledExample>& examples, const SplitSpec& spec) {
    if (examples.empty()) throw Error("cannot split an empty example set");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ConfigError("train_fraction must lie strictly inside (0,1)");

    Split split;
    if (spec.stratify_by_label) {
        std::vector<std::size_t> by_class[2];
        for (std::size_t i = 0; i < examples.size(); ++i)
            by_class[examples[i].label == Label::Hospitalized ? 1 : 0].push_back(i);
        for (int c = 0; c < 2; ++c) {
            if (by_class[c].size() < 2)
                throw Error(std::string("stratified split needs at least 2 examples of class ") +
                            (c == 1 ? "Hospitalized" : "NotHospitalized"));
            Rng rng(mix_seed(spec.seed, 0x53504C4954ULL + static_cast<std::uint64_t>(c)));
            shuffle_indices(by_class[c], rng);
            std::size_t k = train_count(spec.train_fraction, by_class[c].size());
            k = std::min(std::max<std::size_t>(k, 1), by_class[c].size() - 1);
            split.train.insert(split.train.end(), by_class[c].begin(), by_class[c].begin() + k);
            split.test.insert(split.test.end(), by_class[c].begin() + k, by_class[c].end());
        }
    } else {
        std::vector<std::size_t> idx(examples.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        Rng rng(mix_seed(spec.seed, 0x53504C4954ULL));
        shuffle_indices(idx, rng);
        std::size_t k = train_count(spec.train_fraction, idx.size());
        k = std::min(std::max<std::size_t>(k, 1), idx.size() - 1);
        split.train.assign(idx.begin(), idx.begin() + k);
        split.test.assign(idx.begin() + k, idx.end());
    }
    if (split.test.empty() || split.train.empty())
        throw Error("split produced an empty train or test set");
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

} // namespace clem
