#include "clem/models/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <omp.h>

#include "clem/error.hpp"
#include "clem/rng.hpp"
#include "clem/synthgen.hpp"

namespace clem {

namespace {

struct NodeBest {
    double gain = 0.0;
    std::int32_t feature = -1;
    double threshold = 0.0;
};

bool better(double gain, std::int32_t feature, double thr, const NodeBest& cur) {
    if (gain != cur.gain) return gain > cur.gain;
    if (feature != cur.feature) return feature < cur.feature;
    return thr < cur.threshold;
}

/// Presorted row orderings, one per feature; ties by row index.
std::vector<std::vector<std::uint32_t>> presort(const Matrix& X) {
    std::vector<std::vector<std::uint32_t>> order(X.cols);
    const std::int64_t cols = static_cast<std::int64_t>(X.cols);
#pragma omp parallel for schedule(static)
    for (std::int64_t f = 0; f < cols; ++f) {
        auto& ord = order[static_cast<std::size_t>(f)];
        ord.resize(X.rows);
        std::iota(ord.begin(), ord.end(), 0u);
        std::stable_sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
            return X.at(a, static_cast<std::size_t>(f)) < X.at(b, static_cast<std::size_t>(f));
        });
    }
    return order;
}

} // namespace

SplitChoice best_stump_split(const Matrix& X, std::span<const double> response,
                             int min_samples_leaf, int threads) {
    const std::size_t n = X.rows;
    double total_sum = 0.0;
    for (double r : response) total_sum += r;
    const double total_cnt = double(n);

    std::vector<NodeBest> per_feature(X.cols);
    const std::int64_t cols = static_cast<std::int64_t>(X.cols);
#pragma omp parallel for schedule(static) num_threads(std::max(1, threads))
    for (std::int64_t f = 0; f < cols; ++f) {
        std::vector<std::uint32_t> ord(n);
        std::iota(ord.begin(), ord.end(), 0u);
        std::stable_sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
            return X.at(a, static_cast<std::size_t>(f)) < X.at(b, static_cast<std::size_t>(f));
        });
        NodeBest best;
        double sum = 0.0, cnt = 0.0, prev = 0.0;
        for (std::uint32_t row : ord) {
            const double v = X.at(row, static_cast<std::size_t>(f));
            if (cnt > 0 && v > prev) {
                const double nl = cnt, nr = total_cnt - cnt;
                if (nl >= min_samples_leaf && nr >= min_samples_leaf) {
                    const double sl = sum, sr = total_sum - sum;
                    const double gain = sl * sl / nl + sr * sr / nr - total_sum * total_sum / total_cnt;
                    const double thr = (prev + v) / 2.0;
                    if (better(gain, static_cast<std::int32_t>(f), thr, best))
                        best = {gain, static_cast<std::int32_t>(f), thr};
                }
            }
            sum += response[row];
            cnt += 1.0;
            prev = v;
        }
        per_feature[static_cast<std::size_t>(f)] = best;
    }

    NodeBest overall;
    for (const auto& b : per_feature) {
        if (b.feature < 0) continue;
        if (overall.feature < 0 || better(b.gain, b.feature, b.threshold, overall)) overall = b;
    }
    if (overall.feature < 0 || overall.gain <= 0.0) return {};
    return {overall.feature, overall.threshold, overall.gain};
}

GbmCore train_gbm_core(const Matrix& X, const std::vector<int>& y, const GbmConfig& cfg) {
    if (X.rows == 0 || X.rows != y.size()) throw Error("gbm: bad training shape");
    if (cfg.n_trees < 0 || cfg.max_depth < 1 || !(cfg.learning_rate > 0.0 && cfg.learning_rate <= 1.0))
        throw ConfigError("gbm: n_trees >= 0, max_depth >= 1, learning_rate in (0,1] required");

    const std::size_t n = X.rows;
    const std::int64_t cols = static_cast<std::int64_t>(X.cols);
    const auto order = presort(X);

    GbmCore core;
    {
        double pos = 0;
        for (int v : y) pos += v;
        double rate = std::clamp(pos / double(n), 1e-9, 1.0 - 1e-9);
        core.f0 = float(std::log(rate / (1.0 - rate)));
    }

    std::vector<double> margin(n, core.f0);
    std::vector<double> resid(n), hess(n);
    std::vector<std::int32_t> node_of(n);
    std::vector<std::size_t> sample(n);

    auto mean_logloss = [&] {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = margin[i];
            s += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * y[i];
        }
        return s / double(n);
    };
    core.train_loss_path.push_back(mean_logloss());

    for (int stage = 0; stage < cfg.n_trees; ++stage) {
        for (std::size_t i = 0; i < n; ++i) {
            const double p = sigmoid(margin[i]);
            resid[i] = double(y[i]) - p;
            hess[i] = std::max(p * (1.0 - p), 1e-12);
        }

        std::fill(node_of.begin(), node_of.end(), 0);
        if (cfg.subsample < 1.0) {
            std::iota(sample.begin(), sample.end(), std::size_t(0));
            Rng rng(mix_seed(cfg.seed, 0x47424D00ULL + static_cast<std::uint64_t>(stage)));
            for (std::size_t i = sample.size(); i > 1; --i)
                std::swap(sample[i - 1], sample[rng.bounded(i)]);
            auto keep = static_cast<std::size_t>(cfg.subsample * double(n));
            for (std::size_t i = keep; i < n; ++i) node_of[sample[i]] = -1;
        }

        GbmTree tree;
        tree.nodes.push_back(GbmNode{});
        std::vector<std::int32_t> level = {0};

        for (int depth = 0; depth < cfg.max_depth && !level.empty(); ++depth) {
            const int n_slots = static_cast<int>(level.size());
            std::vector<std::int32_t> slot_of(tree.nodes.size(), -1);
            for (int s = 0; s < n_slots; ++s) slot_of[static_cast<std::size_t>(level[s])] = s;

            std::vector<double> tot_sum(n_slots, 0.0), tot_cnt(n_slots, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const std::int32_t nd = node_of[i];
                if (nd < 0 || static_cast<std::size_t>(nd) >= slot_of.size()) continue;
                const std::int32_t s = slot_of[static_cast<std::size_t>(nd)];
                if (s < 0) continue;
                tot_sum[static_cast<std::size_t>(s)] += resid[i];
                tot_cnt[static_cast<std::size_t>(s)] += 1.0;
            }

            // (feature x slot) bests, reduced serially afterwards
            std::vector<NodeBest> feat_best(static_cast<std::size_t>(cols) * n_slots);
#pragma omp parallel num_threads(std::max(1, cfg.threads))
            {
                std::vector<double> sum(n_slots), cnt(n_slots), prev(n_slots);
#pragma omp for schedule(static)
                for (std::int64_t f = 0; f < cols; ++f) {
                    std::fill(sum.begin(), sum.end(), 0.0);
                    std::fill(cnt.begin(), cnt.end(), 0.0);
                    NodeBest* best = feat_best.data() + static_cast<std::size_t>(f) * n_slots;
                    for (std::uint32_t row : order[static_cast<std::size_t>(f)]) {
                        const std::int32_t nd = node_of[row];
                        if (nd < 0 || static_cast<std::size_t>(nd) >= slot_of.size()) continue;
                        const std::int32_t s = slot_of[static_cast<std::size_t>(nd)];
                        if (s < 0) continue;
                        const double v = X.at(row, static_cast<std::size_t>(f));
                        if (cnt[static_cast<std::size_t>(s)] > 0 && v > prev[static_cast<std::size_t>(s)]) {
                            const double nl = cnt[static_cast<std::size_t>(s)];
                            const double nr = tot_cnt[static_cast<std::size_t>(s)] - nl;
                            if (nl >= cfg.min_samples_leaf && nr >= cfg.min_samples_leaf) {
                                const double sl = sum[static_cast<std::size_t>(s)];
                                const double sr = tot_sum[static_cast<std::size_t>(s)] - sl;
                                const double tot = tot_sum[static_cast<std::size_t>(s)];
                                const double gain =
                                    sl * sl / nl + sr * sr / nr - tot * tot / tot_cnt[static_cast<std::size_t>(s)];
                                const double thr = (prev[static_cast<std::size_t>(s)] + v) / 2.0;
                                if (better(gain, static_cast<std::int32_t>(f), thr, best[s]))
                                    best[s] = {gain, static_cast<std::int32_t>(f), thr};
                            }
                        }
                        sum[static_cast<std::size_t>(s)] += resid[row];
                        cnt[static_cast<std::size_t>(s)] += 1.0;
                        prev[static_cast<std::size_t>(s)] = v;
                    }
                }
            }

            std::vector<NodeBest> chosen(n_slots);
            for (std::int64_t f = 0; f < cols; ++f) {
                const NodeBest* best = feat_best.data() + static_cast<std::size_t>(f) * n_slots;
                for (int s = 0; s < n_slots; ++s) {
                    if (best[s].feature < 0) continue;
                    if (chosen[static_cast<std::size_t>(s)].feature < 0 ||
                        better(best[s].gain, best[s].feature, best[s].threshold,
                               chosen[static_cast<std::size_t>(s)]))
                        chosen[static_cast<std::size_t>(s)] = best[s];
                }
            }

            std::vector<std::int32_t> next_level;
            std::vector<std::int32_t> split_to(tree.nodes.size(), -1);
            for (int s = 0; s < n_slots; ++s) {
                const auto& c = chosen[static_cast<std::size_t>(s)];
                if (c.feature < 0 || c.gain <= 0.0) continue;
                const std::int32_t nid = level[static_cast<std::size_t>(s)];
                const auto left = static_cast<std::int32_t>(tree.nodes.size());
                {
                    auto& nd = tree.nodes[static_cast<std::size_t>(nid)];
                    nd.feature = c.feature;
                    nd.threshold = float(c.threshold);
                    nd.left = left;
                    nd.right = left + 1;
                }
                tree.nodes.push_back(GbmNode{});
                tree.nodes.push_back(GbmNode{});
                split_to[static_cast<std::size_t>(nid)] = left;
                next_level.push_back(left);
                next_level.push_back(left + 1);
            }
            if (next_level.empty()) break;
            for (std::size_t i = 0; i < n; ++i) {
                const std::int32_t nd = node_of[i];
                if (nd < 0 || static_cast<std::size_t>(nd) >= split_to.size()) continue;
                const std::int32_t child = split_to[static_cast<std::size_t>(nd)];
                if (child < 0) continue;
                const auto& node = tree.nodes[static_cast<std::size_t>(nd)];
                node_of[i] = double(X.at(i, static_cast<std::size_t>(node.feature))) <=
                                     double(node.threshold)
                                 ? child
                                 : child + 1;
            }
            level = std::move(next_level);
        }

        // Newton leaf values over the in-sample rows, shrunk by the rate
        std::vector<double> leaf_g(tree.nodes.size(), 0.0), leaf_h(tree.nodes.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::int32_t nd = node_of[i];
            if (nd < 0) continue;
            leaf_g[static_cast<std::size_t>(nd)] += resid[i];
            leaf_h[static_cast<std::size_t>(nd)] += hess[i];
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            auto& nd = tree.nodes[k];
            if (nd.feature >= 0) continue;
            nd.value = float(cfg.learning_rate * leaf_g[k] / (leaf_h[k] + 1e-12));
        }

        for (std::size_t i = 0; i < n; ++i) {
            const GbmNode* nd = tree.nodes.data();
            while (nd->feature >= 0)
                nd = tree.nodes.data() +
                     (X.at(i, static_cast<std::size_t>(nd->feature)) <= double(nd->threshold)
                          ? nd->left
                          : nd->right);
            margin[i] += nd->value;
        }
        core.trees.push_back(std::move(tree));
        core.train_loss_path.push_back(mean_logloss());
    }
    return core;
}

double gbm_margin(const GbmCore& core, std::span<const double> x) {
    double m = core.f0;
    for (const auto& tree : core.trees) {
        const GbmNode* nd = tree.nodes.data();
        while (nd->feature >= 0)
            nd = tree.nodes.data() +
                 (x[static_cast<std::size_t>(nd->feature)] <= double(nd->threshold) ? nd->left
                                                                                    : nd->right);
        m += nd->value;
    }
    return m;
}

EmbedGbmModel::EmbedGbmModel(std::shared_ptr<const Vocabulary> vocab,
                             std::shared_ptr<const EmbeddingTable> table, AgeBucketTable buckets,
                             GbmCore core)
    : vocab_(std::move(vocab)), table_(std::move(table)), buckets_(std::move(buckets)),
      core_(std::move(core)) {}

double EmbedGbmModel::predict_proba(const PatientHistory& history) const {
    auto x = featurize_history(history, *table_, *vocab_, buckets_);
    return sigmoid(gbm_margin(core_, x));
}

EmbedGbmModel EmbedGbmModel::train(const std::vector<LabeledExample>& examples,
                                   const std::vector<std::size_t>& train_idx,
                                   std::shared_ptr<const Vocabulary> vocab,
                                   std::shared_ptr<const EmbeddingTable> table,
                                   const AgeBucketTable& buckets, const GbmConfig& cfg,
                                   TrainReport* report) {
    if (train_idx.empty()) throw Error("embed-gbm: empty training set");
    const std::size_t d = std::size_t(3) * table->dim() + 2;
    Matrix X;
    X.rows = train_idx.size();
    X.cols = d;
    X.data.resize(X.rows * X.cols);
    std::vector<int> y(train_idx.size());
    const std::int64_t n = static_cast<std::int64_t>(train_idx.size());
#pragma omp parallel for schedule(static) num_threads(std::max(1, cfg.threads))
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& ex = examples[train_idx[static_cast<std::size_t>(i)]];
        auto f = featurize_history(ex.history, *table, *vocab, buckets);
        std::copy(f.begin(), f.end(), X.data.begin() + static_cast<std::size_t>(i) * d);
        y[static_cast<std::size_t>(i)] = ex.label == Label::Hospitalized ? 1 : 0;
    }
    GbmCore core = train_gbm_core(X, y, cfg);
    if (report) {
        report->loss_path = core.train_loss_path;
        report->final_loss = core.train_loss_path.back();
        report->iterations = static_cast<int>(core.trees.size());
    }
    return EmbedGbmModel(std::move(vocab), std::move(table), buckets, std::move(core));
}

} // namespace clem
