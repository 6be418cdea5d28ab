#include "cellgraph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cellgraph/error.hpp"

namespace cellgraph {

double roc_auc(std::span<const int> y_true, std::span<const double> score) {
    if (y_true.size() != score.size()) throw Error("roc_auc: label and score lengths differ");
    const std::size_t n = y_true.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });

    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && score[order[j]] == score[order[i]]) ++j;
        const double midrank = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t) {
            if (y_true[order[t]] == 1) {
                rank_sum_pos += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
    return (rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0) / (double(n_pos) * double(n_neg));
}

Metrics compute_metrics(std::span<const int> y_true, std::span<const double> prob_pos, double threshold) {
    if (y_true.empty()) throw Error("compute_metrics: no samples");
    if (y_true.size() != prob_pos.size()) throw Error("compute_metrics: label and probability lengths differ");
    Metrics m;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] != 0 && y_true[i] != 1) throw Error("compute_metrics: labels must be 0 or 1");
        const bool pred = prob_pos[i] > threshold;
        if (y_true[i] == 1) {
            pred ? ++m.tp : ++m.fn;
        } else {
            pred ? ++m.fp : ++m.tn;
        }
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : double(a) / double(b); };
    m.accuracy = ratio(m.tp + m.tn, m.n());
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
    m.roc_auc = roc_auc(y_true, prob_pos);
    if (std::isnan(m.roc_auc)) m.warnings.push_back("ROC-AUC undefined: y_true contains a single class");
    return m;
}

}  // namespace cellgraph
