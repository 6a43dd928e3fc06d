#pragma once

#include <memory>
#include <string>

#include "clem/models/gbm.hpp"
#include "clem/models/logit.hpp"
#include "clem/models/svm.hpp"
#include "clem/models/transformer.hpp"

namespace clem {

/// Shared artifacts a loaded model binds to. Loaders validate shapes
/// (vocab size, embedding dim) against the manifest.
struct ModelArtifacts {
    std::shared_ptr<const Vocabulary> vocab;
    std::shared_ptr<const EmbeddingTable> table;
    std::shared_ptr<const RiskFactorMap> risk_map;
    AgeBucketTable buckets = AgeBucketTable::defaults();
};

/// Writes `<base>.json` (manifest) and `<base>.clmp` (f32 parameter blob
/// with named sections). The round trip is bit-exact: models snap their
/// parameters to f32 at the end of training.
void save_model(const Classifier& model, const std::string& base);
std::unique_ptr<Classifier> load_model(const std::string& base, const ModelArtifacts& artifacts);

/// Pretrained encoder artifact (not yet a classifier).
void save_encoder(const EncoderF& encoder, const std::string& base);
EncoderF load_encoder(const std::string& base, const Vocabulary& vocab);

} // namespace clem
