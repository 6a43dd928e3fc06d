#include "clem/embedding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <omp.h>

#include "clem/error.hpp"
#include "clem/rng.hpp"

namespace clem {

EmbeddingTable::EmbeddingTable(std::int32_t vocab_size, int dim)
    : rows_(vocab_size), dim_(dim),
      data_(static_cast<std::size_t>(vocab_size) * static_cast<std::size_t>(dim), 0.0f) {
    if (vocab_size <= 0 || dim <= 0) throw ConfigError("embedding table needs positive shape");
}

double EmbeddingTable::cosine(std::int32_t a, std::int32_t b) const {
    auto ra = row(a), rb = row(b);
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < dim_; ++i) {
        dot += double(ra[i]) * rb[i];
        na += double(ra[i]) * ra[i];
        nb += double(rb[i]) * rb[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {
constexpr char kMagic[4] = {'C', 'L', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated embedding file: " + path);
    return v;
}
} // namespace

void EmbeddingTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write embeddings: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(rows_));
    write_u32(out, static_cast<std::uint32_t>(dim_));
    out.write(reinterpret_cast<const char*>(data_.data()),
              static_cast<std::streamsize>(data_.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path);
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embeddings: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw VersionError("not an embedding file (bad magic): " + path);
    std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
        throw VersionError("unsupported embedding version " + std::to_string(version) + ": " + path);
    std::uint32_t rows = read_u32(in, path);
    std::uint32_t dim = read_u32(in, path);
    if (rows == 0 || dim == 0 || rows > (1u << 28) || dim > (1u << 20))
        throw SchemaError("implausible embedding shape in " + path);
    EmbeddingTable t(static_cast<std::int32_t>(rows), static_cast<int>(dim));
    if (!in.read(reinterpret_cast<char*>(t.data_.data()),
                 static_cast<std::streamsize>(t.data_.size() * sizeof(float))))
        throw IoError("truncated embedding file: " + path);
    for (float v : t.data_)
        if (!std::isfinite(v)) throw SchemaError("non-finite embedding value in " + path);
    return t;
}

// --- negative-sampling step ---

template <typename Real>
Real cbow_step_loss_grad(std::span<const Real> ctx, int n_ctx, std::span<const Real> center_out,
                         std::span<const Real> neg_out, int n_neg, int dim,
                         std::span<Real> ctx_grad, std::span<Real> center_grad,
                         std::span<Real> neg_grad) {
    std::vector<Real> mean(static_cast<std::size_t>(dim), Real(0));
    for (int c = 0; c < n_ctx; ++c)
        for (int i = 0; i < dim; ++i) mean[static_cast<std::size_t>(i)] += ctx[std::size_t(c) * dim + i];
    const Real inv = Real(1) / Real(n_ctx);
    for (int i = 0; i < dim; ++i) mean[static_cast<std::size_t>(i)] *= inv;

    auto sigma = [](Real x) { return Real(1) / (Real(1) + std::exp(-x)); };

    std::vector<Real> mean_grad(static_cast<std::size_t>(dim), Real(0));
    Real loss = 0;

    Real dot = 0;
    for (int i = 0; i < dim; ++i) dot += center_out[static_cast<std::size_t>(i)] * mean[static_cast<std::size_t>(i)];
    Real p = sigma(dot);
    loss -= std::log(std::max(p, std::numeric_limits<Real>::min()));
    Real g = p - Real(1); // d loss / d dot
    for (int i = 0; i < dim; ++i) {
        center_grad[static_cast<std::size_t>(i)] = g * mean[static_cast<std::size_t>(i)];
        mean_grad[static_cast<std::size_t>(i)] += g * center_out[static_cast<std::size_t>(i)];
    }

    for (int n = 0; n < n_neg; ++n) {
        const Real* u = neg_out.data() + std::size_t(n) * dim;
        Real* ug = neg_grad.data() + std::size_t(n) * dim;
        Real d = 0;
        for (int i = 0; i < dim; ++i) d += u[i] * mean[static_cast<std::size_t>(i)];
        Real q = sigma(-d);
        loss -= std::log(std::max(q, std::numeric_limits<Real>::min()));
        Real gn = sigma(d); // = 1 - q
        for (int i = 0; i < dim; ++i) {
            ug[i] = gn * mean[static_cast<std::size_t>(i)];
            mean_grad[static_cast<std::size_t>(i)] += gn * u[i];
        }
    }

    for (int c = 0; c < n_ctx; ++c)
        for (int i = 0; i < dim; ++i)
            ctx_grad[std::size_t(c) * dim + i] = mean_grad[static_cast<std::size_t>(i)] * inv;
    return loss;
}

template float cbow_step_loss_grad<float>(std::span<const float>, int, std::span<const float>,
                                          std::span<const float>, int, int, std::span<float>,
                                          std::span<float>, std::span<float>);
template double cbow_step_loss_grad<double>(std::span<const double>, int, std::span<const double>,
                                            std::span<const double>, int, int, std::span<double>,
                                            std::span<double>, std::span<double>);

// --- trainer ---

namespace {

constexpr std::uint64_t kInitStream = 0x300000000ULL;
constexpr std::uint64_t kSeqStream = 0x400000000ULL;

/// Unigram^0.75 cumulative table over code/demographic tokens.
struct NoiseDist {
    std::vector<double> cdf;
    explicit NoiseDist(const Vocabulary& vocab) {
        cdf.resize(static_cast<std::size_t>(vocab.size()));
        double acc = 0;
        for (std::int32_t i = 0; i < vocab.size(); ++i) {
            double w = i < kNumSpecials ? 0.0 : std::pow(double(vocab.frequency(i)), 0.75);
            acc += w;
            cdf[static_cast<std::size_t>(i)] = acc;
        }
        if (acc <= 0) throw Error("noise distribution is empty");
    }
    std::int32_t draw(Rng& rng) const {
        double u = rng.next_double() * cdf.back();
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        if (it == cdf.end()) --it;
        return static_cast<std::int32_t>(it - cdf.begin());
    }
};

} // namespace

EmbeddingTable train_cbow(const std::vector<ClaimSequence>& sequences, const Vocabulary& vocab,
                          const CbowConfig& cfg, CbowTrainStats* stats) {
    if (sequences.empty()) throw Error("cannot train embeddings on an empty corpus");
    if (cfg.dim < 1 || cfg.window < 1 || cfg.negatives < 1)
        throw ConfigError("cbow config: dim, window, negatives must all be >= 1");

    const int dim = cfg.dim;
    EmbeddingTable table(vocab.size(), dim);
    std::vector<float> out_vecs(table.data().size(), 0.0f);
    {
        Rng rng(mix_seed(cfg.seed, kInitStream));
        for (auto& w : table.data())
            w = float((rng.next_double() - 0.5) / dim);
    }

    NoiseDist noise(vocab);

    std::int64_t total_positions = 0;
    for (const auto& s : sequences) total_positions += static_cast<std::int64_t>(s.size());
    const double total_work = double(total_positions) * cfg.epochs;
    std::atomic<std::int64_t> progress{0};

    std::vector<double> epoch_loss(static_cast<std::size_t>(cfg.epochs), 0.0);
    float* const in_data = table.data().data();
    float* const out_data = out_vecs.data();
    const std::int64_t n_seq = static_cast<std::int64_t>(sequences.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::int64_t loss_n = 0;

#pragma omp parallel num_threads(std::max(1, cfg.threads)) reduction(+ : loss_sum, loss_n)
        {
            std::vector<float> ctx(std::size_t(2) * cfg.window * dim);
            std::vector<float> ctx_grad(ctx.size());
            std::vector<float> center_grad(static_cast<std::size_t>(dim));
            std::vector<float> neg_buf(std::size_t(cfg.negatives) * dim);
            std::vector<float> neg_grad(neg_buf.size());
            std::vector<std::int32_t> ctx_ids(std::size_t(2) * cfg.window);
            std::vector<std::int32_t> neg_ids(static_cast<std::size_t>(cfg.negatives));

#pragma omp for schedule(static)
            for (std::int64_t si = 0; si < n_seq; ++si) {
                const auto& ids = sequences[static_cast<std::size_t>(si)].ids;
                const int len = static_cast<int>(ids.size());
                Rng rng(mix_seed(cfg.seed, kSeqStream + std::uint64_t(epoch) * std::uint64_t(n_seq) +
                                               std::uint64_t(si)));
                for (int pos = 0; pos < len; ++pos) {
                    const std::int32_t center = ids[static_cast<std::size_t>(pos)];
                    int n_ctx = 0;
                    for (int off = -cfg.window; off <= cfg.window; ++off) {
                        if (off == 0) continue;
                        int j = pos + off;
                        if (j < 0 || j >= len) continue;
                        ctx_ids[static_cast<std::size_t>(n_ctx++)] = ids[static_cast<std::size_t>(j)];
                    }
                    if (n_ctx == 0) continue;
                    int n_neg = 0;
                    for (int k = 0; k < cfg.negatives; ++k) {
                        std::int32_t neg = noise.draw(rng);
                        if (neg == center) continue;
                        neg_ids[static_cast<std::size_t>(n_neg++)] = neg;
                    }

                    for (int c = 0; c < n_ctx; ++c)
                        std::memcpy(ctx.data() + std::size_t(c) * dim,
                                    in_data + std::size_t(ctx_ids[std::size_t(c)]) * dim,
                                    sizeof(float) * std::size_t(dim));
                    for (int k = 0; k < n_neg; ++k)
                        std::memcpy(neg_buf.data() + std::size_t(k) * dim,
                                    out_data + std::size_t(neg_ids[std::size_t(k)]) * dim,
                                    sizeof(float) * std::size_t(dim));

                    float loss = cbow_step_loss_grad<float>(
                        ctx, n_ctx, {out_data + std::size_t(center) * dim, std::size_t(dim)},
                        neg_buf, n_neg, dim, ctx_grad, center_grad, neg_grad);

                    std::int64_t done = progress.fetch_add(1, std::memory_order_relaxed);
                    float lr = float(cfg.learning_rate *
                                     std::max(1.0 - double(done) / total_work, 1e-4));

                    float* center_row = out_data + std::size_t(center) * dim;
                    for (int i = 0; i < dim; ++i) center_row[i] -= lr * center_grad[std::size_t(i)];
                    for (int k = 0; k < n_neg; ++k) {
                        float* u = out_data + std::size_t(neg_ids[std::size_t(k)]) * dim;
                        const float* g = neg_grad.data() + std::size_t(k) * dim;
                        for (int i = 0; i < dim; ++i) u[i] -= lr * g[i];
                    }
                    for (int c = 0; c < n_ctx; ++c) {
                        float* v = in_data + std::size_t(ctx_ids[std::size_t(c)]) * dim;
                        const float* g = ctx_grad.data() + std::size_t(c) * dim;
                        for (int i = 0; i < dim; ++i) v[i] -= lr * g[i];
                    }

                    loss_sum += loss;
                    loss_n += 1;
                }
            }
        }
        epoch_loss[static_cast<std::size_t>(epoch)] = loss_n > 0 ? loss_sum / double(loss_n) : 0.0;
    }

    if (stats) {
        stats->epoch_loss = std::move(epoch_loss);
        stats->positions = total_positions;
    }
    return table;
}

// --- nearest neighbor ---

namespace {

std::vector<double> row_norms(const EmbeddingTable& table) {
    std::vector<double> norms(static_cast<std::size_t>(table.rows()));
    for (std::int32_t r = 0; r < table.rows(); ++r) {
        auto v = table.row(r);
        double s = 0;
        for (float x : v) s += double(x) * x;
        norms[static_cast<std::size_t>(r)] = std::sqrt(s);
    }
    return norms;
}

std::int32_t nearest_impl(std::int32_t query, const EmbeddingTable& table, const Vocabulary& vocab,
                          bool same_system, const std::vector<double>& norms) {
    const TokenKind qk = vocab.kind(query);
    if (!is_code_kind(qk)) throw Error("nearest_code query must be a code token: " + vocab.surface(query));
    auto qrow = table.row(query);
    const double qnorm = norms[static_cast<std::size_t>(query)];
    std::int32_t best = -1;
    double best_cos = -2.0;
    for (std::int32_t c = 0; c < table.rows(); ++c) {
        if (c == query) continue;
        TokenKind k = vocab.kind(c);
        if (!is_code_kind(k)) continue;
        if (same_system && k != qk) continue;
        auto v = table.row(c);
        double dot = 0;
        for (int i = 0; i < table.dim(); ++i) dot += double(qrow[i]) * v[i];
        double denom = qnorm * norms[static_cast<std::size_t>(c)];
        double cos = denom == 0.0 ? 0.0 : dot / denom;
        if (cos > best_cos) {
            best_cos = cos;
            best = c;
        }
    }
    if (best < 0)
        throw Error("no candidate token of the same kind for " + vocab.surface(query));
    return best;
}

} // namespace

std::int32_t nearest_code(std::int32_t query, const EmbeddingTable& table, const Vocabulary& vocab,
                          bool same_system) {
    return nearest_impl(query, table, vocab, same_system, row_norms(table));
}

std::vector<std::int32_t> nearest_many(std::span<const std::int32_t> queries,
                                       const EmbeddingTable& table, const Vocabulary& vocab,
                                       bool same_system, int threads) {
    auto norms = row_norms(table);
    std::vector<std::int32_t> out(queries.size());
    const std::int64_t n = static_cast<std::int64_t>(queries.size());
#pragma omp parallel for schedule(static) num_threads(std::max(1, threads))
    for (std::int64_t i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] =
            nearest_impl(queries[static_cast<std::size_t>(i)], table, vocab, same_system, norms);
    return out;
}

std::vector<double> featurize_history(const PatientHistory& history, const EmbeddingTable& table,
                                      const Vocabulary& vocab, const AgeBucketTable& buckets) {
    const int dim = table.dim();
    std::vector<double> features(std::size_t(3) * dim + 2, 0.0);
    double counts[3] = {0, 0, 0};
    auto add = [&](const MedicalCode& code, int slot) {
        auto row = table.row(vocab.id(code_token(code)));
        double* seg = features.data() + std::size_t(slot) * dim;
        for (int i = 0; i < dim; ++i) seg[i] += row[i];
        counts[slot] += 1;
    };
    for (const auto& claim : history.claims) {
        for (const auto& c : claim.dx) add(c, 0);
        for (const auto& c : claim.px) add(c, 1);
        for (const auto& c : claim.rx) add(c, 2);
    }
    for (int slot = 0; slot < 3; ++slot) {
        if (counts[slot] == 0) continue;
        double* seg = features.data() + std::size_t(slot) * dim;
        for (int i = 0; i < dim; ++i) seg[i] /= counts[slot];
    }
    features[std::size_t(3) * dim] = buckets.bucket(history.age_years).ordinal;
    features[std::size_t(3) * dim + 1] = history.sex == Sex::M ? 1.0 : 0.0;
    return features;
}

} // namespace clem
