#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cellgraph {

/// Binary classification metrics; class 1 is the positive (tumor) class.
struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double roc_auc = 0.0;  // NaN when y_true holds a single class
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::vector<std::string> warnings;

    std::size_t n() const { return tp + fp + fn + tn; }
};

/// Positive prediction when prob_pos > threshold (a 0.5 tie goes to class 0,
/// matching argmax with lower-index tie-break). Precision/recall/F1 use 0/0 = 0.
Metrics compute_metrics(std::span<const int> y_true, std::span<const double> prob_pos, double threshold = 0.5);

/// ROC-AUC by the rank statistic with midranks for ties. NaN if either class
/// is absent.
double roc_auc(std::span<const int> y_true, std::span<const double> score);

}  // namespace cellgraph
