#include "clem/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <vector>

#include "clem/error.hpp"

namespace clem {

MetricsReport compute_metrics(std::span<const double> probabilities, std::span<const int> labels) {
    if (probabilities.size() != labels.size() || probabilities.empty())
        throw Error("compute_metrics: needs equal-length, nonempty inputs");
    MetricsReport r;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        const bool pred = probabilities[i] >= 0.5;
        const bool pos = labels[i] == 1;
        if (pred && pos) ++r.tp;
        else if (pred && !pos) ++r.fp;
        else if (!pred && pos) ++r.fn;
        else ++r.tn;
    }
    const auto n = double(r.n());
    r.accuracy = 100.0 * double(r.tp + r.tn) / n;
    if (r.tp + r.fp > 0) r.precision = 100.0 * double(r.tp) / double(r.tp + r.fp);
    if (r.tp + r.fn > 0) r.recall = 100.0 * double(r.tp) / double(r.tp + r.fn);
    if (r.precision && r.recall && (*r.precision + *r.recall) > 0.0)
        r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
    return r;
}

double auc_score(std::span<const double> probabilities, std::span<const int> labels) {
    const std::size_t n = probabilities.size();
    if (n != labels.size() || n == 0) throw Error("auc_score: needs equal-length, nonempty inputs");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return probabilities[a] < probabilities[b]; });
    // average ranks over ties
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && probabilities[order[j + 1]] == probabilities[order[i]]) ++j;
        const double avg = (double(i) + double(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double pos_rank_sum = 0;
    long long n_pos = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == 1) {
            pos_rank_sum += rank[k];
            ++n_pos;
        }
    }
    const long long n_neg = static_cast<long long>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("auc_score: needs both classes");
    return (pos_rank_sum - double(n_pos) * double(n_pos + 1) / 2.0) /
           (double(n_pos) * double(n_neg));
}

std::string metrics_to_text(const MetricsReport& r, const std::string& name) {
    char buf[256];
    auto fmt = [](const std::optional<double>& v) {
        if (!v) return std::string("   n/a");
        char b[32];
        std::snprintf(b, sizeof(b), "%6.1f", *v);
        return std::string(b);
    };
    std::snprintf(buf, sizeof(buf), "%-12s P=%s R=%s F1=%s Acc=%6.1f (tp=%lld fp=%lld tn=%lld fn=%lld)",
                  name.c_str(), fmt(r.precision).c_str(), fmt(r.recall).c_str(), fmt(r.f1).c_str(),
                  r.accuracy, r.tp, r.fp, r.tn, r.fn);
    return buf;
}

} // namespace clem
