#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cellgraph/matrix.hpp"
#include "cellgraph/random.hpp"

namespace cellgraph {

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;   // x[feature] <= threshold
    int right = -1;
    std::vector<double> value;  // leaf: class frequencies (forest) or one score (boosting)

    bool is_leaf() const { return feature < 0; }
    bool operator==(const TreeNode&) const = default;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    const std::vector<double>& leaf_value(const double* row) const;
    int depth() const;
    bool operator==(const Tree&) const = default;
};

struct CartConfig {
    int max_depth = 8;
    int min_leaf = 2;
    int features_per_split = 0;  // 0 = all features
};

/// Classification tree with Gini impurity over the rows in `rows` (repeats
/// allowed, e.g. a bootstrap sample). Splits need a strict impurity decrease;
/// ties go to the lowest feature index, then the lowest threshold.
/// Thresholds are midpoints between sorted distinct values.
Tree train_cart(const Matrix& x, std::span<const int> y, int n_classes, std::span<const std::size_t> rows,
                const CartConfig& cfg, Rng& rng);

struct ForestConfig {
    int n_trees = 100;
    int max_depth = 8;
    int min_leaf = 2;
    int features_per_split = 0;  // 0 = ceil(sqrt(p))
    bool bootstrap = true;
    std::uint64_t seed = 0;

    void check() const;
};

struct BoostConfig {
    int n_rounds = 200;
    int max_depth = 3;
    double learning_rate = 0.1;
    int min_leaf = 2;
    std::uint64_t seed = 0;

    void check() const;
};

enum class TabularKind : std::uint8_t { random_forest = 1, gradient_boosting = 2 };

struct TabularModel {
    TabularKind kind = TabularKind::random_forest;
    int n_features = 0;
    int n_classes = 2;
    std::vector<Tree> trees;
    double base_score = 0.0;           // boosting: initial log-odds
    std::vector<double> loss_curve;    // boosting: training log-loss, initial then per round
};

TabularModel train_random_forest(const Matrix& x, std::span<const int> y, const ForestConfig& cfg);

/// Binary logistic boosting: regression trees on the negative gradient,
/// Newton leaf values sum(r)/sum(h) times the learning rate.
TabularModel train_gradient_boosting(const Matrix& x, std::span<const int> y, const BoostConfig& cfg);

/// n x n_classes probabilities.
Matrix predict_tabular(const TabularModel& model, const Matrix& x);

std::string encode_tabular_model(const TabularModel& model);
TabularModel decode_tabular_model(const std::string& bytes);
void save_tabular_model(const TabularModel& model, const std::filesystem::path& path);
TabularModel load_tabular_model(const std::filesystem::path& path);

}  // namespace cellgraph
