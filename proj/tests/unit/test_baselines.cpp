#include "doctest.h"

#include <cmath>
#include <numeric>

#include "cellgraph/baselines.hpp"
#include "cellgraph/error.hpp"
#include "cellgraph/random.hpp"
#include "test_support.hpp"

using namespace cellgraph;

namespace {

// x < 0 -> class 0, x > 0 -> class 1, gap of at least `margin` around zero,
// plus `noise_dims` irrelevant features.
struct Tabular {
    Matrix x;
    std::vector<int> y;
};

Tabular separable(std::size_t n, int noise_dims, std::uint64_t seed, double margin = 1.0) {
    Rng rng(seed);
    Tabular t;
    t.x.resize(Eigen::Index(n), 1 + noise_dims);
    for (std::size_t i = 0; i < n; ++i) {
        const int cls = int(i % 2);
        const auto r = Eigen::Index(i);
        t.x(r, 0) = (cls ? 1.0 : -1.0) * (margin / 2.0 + rng.uniform(0.0, 3.0));
        for (int j = 1; j <= noise_dims; ++j) t.x(r, j) = rng.normal();
        t.y.push_back(cls);
    }
    return t;
}

Tabular noisy(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Tabular t;
    t.x.resize(Eigen::Index(n), 4);
    for (std::size_t i = 0; i < n; ++i) {
        for (int j = 0; j < 4; ++j) t.x(Eigen::Index(i), j) = rng.normal();
        const double z = t.x(Eigen::Index(i), 0) - 0.5 * t.x(Eigen::Index(i), 2) + rng.normal();
        t.y.push_back(z > 0 ? 1 : 0);
    }
    return t;
}

double accuracy(const Matrix& probs, const std::vector<int>& y) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hit += (probs(Eigen::Index(i), 1) > 0.5 ? 1 : 0) == y[i];
    return double(hit) / double(y.size());
}

// Independent Gini CART reference: exhaustive search written directly.
struct RefNode {
    int feature = -1;
    double threshold = 0.0;
    std::unique_ptr<RefNode> left, right;
    std::vector<double> value;
};

double gini_of(const std::vector<std::size_t>& rows, const std::vector<int>& y) {
    double c1 = 0;
    for (auto i : rows) c1 += y[i];
    const double n = double(rows.size()), p1 = c1 / n, p0 = 1 - p1;
    return 1 - p0 * p0 - p1 * p1;
}

std::unique_ptr<RefNode> ref_cart(const Matrix& x, const std::vector<int>& y, const std::vector<std::size_t>& rows,
                                  int depth, int max_depth, int min_leaf) {
    auto node = std::make_unique<RefNode>();
    const double parent = gini_of(rows, y);
    double best_gain = 1e-12;
    if (depth < max_depth && parent > 0) {
        for (int f = 0; f < x.cols(); ++f) {
            std::vector<double> vals;
            for (auto i : rows) vals.push_back(x(Eigen::Index(i), f));
            std::sort(vals.begin(), vals.end());
            vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
            for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
                const double thr = vals[k] + (vals[k + 1] - vals[k]) / 2.0;
                std::vector<std::size_t> l, r;
                for (auto i : rows) (x(Eigen::Index(i), f) <= thr ? l : r).push_back(i);
                if (l.size() < std::size_t(min_leaf) || r.size() < std::size_t(min_leaf)) continue;
                const double gain = parent - (double(l.size()) * gini_of(l, y) + double(r.size()) * gini_of(r, y)) /
                                                 double(rows.size());
                if (gain > best_gain) {
                    best_gain = gain + 1e-12;
                    node->feature = f;
                    node->threshold = thr;
                }
            }
        }
    }
    if (node->feature < 0) {
        double c1 = 0;
        for (auto i : rows) c1 += y[i];
        node->value = {1 - c1 / double(rows.size()), c1 / double(rows.size())};
        return node;
    }
    std::vector<std::size_t> l, r;
    for (auto i : rows) (x(Eigen::Index(i), node->feature) <= node->threshold ? l : r).push_back(i);
    node->left = ref_cart(x, y, l, depth + 1, max_depth, min_leaf);
    node->right = ref_cart(x, y, r, depth + 1, max_depth, min_leaf);
    return node;
}

bool same_tree(const Tree& t, int id, const RefNode& ref) {
    const TreeNode& n = t.nodes[std::size_t(id)];
    if (n.feature != ref.feature) return false;
    if (n.is_leaf()) return std::abs(n.value[0] - ref.value[0]) < 1e-15 && std::abs(n.value[1] - ref.value[1]) < 1e-15;
    return n.threshold == ref.threshold && same_tree(t, n.left, *ref.left) && same_tree(t, n.right, *ref.right);
}

}  // namespace

TEST_CASE("forest: separable data, training accuracy 1") {
    const Tabular t = separable(200, 3, 1);
    ForestConfig cfg;
    cfg.n_trees = 30;
    cfg.seed = 2;
    const TabularModel m = train_random_forest(t.x, t.y, cfg);
    const Matrix p = predict_tabular(m, t.x);
    CHECK(accuracy(p, t.y) == 1.0);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
        CHECK(p.row(i).minCoeff() >= 0.0);
    }
}

TEST_CASE("forest: constant features predict the class prior") {
    Matrix x = Matrix::Constant(10, 3, 2.0);
    const std::vector<int> y{0, 0, 0, 1, 1, 0, 0, 1, 0, 0};
    ForestConfig cfg;
    cfg.n_trees = 5;
    cfg.bootstrap = false;
    const Matrix p = predict_tabular(train_random_forest(x, y, cfg), x);
    for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(std::abs(p(i, 1) - 0.3) < 1e-15);
}

TEST_CASE("forest: same seed, same bytes; different seed, different forest") {
    const Tabular t = noisy(150, 5);
    ForestConfig cfg;
    cfg.n_trees = 10;
    cfg.seed = 9;
    const auto a = encode_tabular_model(train_random_forest(t.x, t.y, cfg));
    CHECK(a == encode_tabular_model(train_random_forest(t.x, t.y, cfg)));
    cfg.seed = 10;
    CHECK(a != encode_tabular_model(train_random_forest(t.x, t.y, cfg)));
}

TEST_CASE("single unbootstrapped tree with all features equals plain CART") {
    const Tabular t = noisy(120, 7);
    ForestConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.features_per_split = int(t.x.cols());
    cfg.max_depth = 5;
    cfg.min_leaf = 3;
    const TabularModel m = train_random_forest(t.x, t.y, cfg);
    std::vector<std::size_t> rows(t.y.size());
    std::iota(rows.begin(), rows.end(), 0);
    const auto ref = ref_cart(t.x, t.y, rows, 0, 5, 3);
    CHECK(same_tree(m.trees[0], 0, *ref));
    CHECK(m.trees[0].depth() <= 5);

    Rng rng(0);
    const Tree direct = train_cart(t.x, t.y, 2, rows, {5, 3, 0}, rng);
    CHECK(direct == m.trees[0]);
}

TEST_CASE("duplicating every row leaves CART splits unchanged") {
    const Tabular t = noisy(80, 3);
    std::vector<std::size_t> once(t.y.size()), twice;
    std::iota(once.begin(), once.end(), 0);
    for (auto i : once) {
        twice.push_back(i);
        twice.push_back(i);
    }
    Rng r1(0), r2(0);
    const Tree a = train_cart(t.x, t.y, 2, once, {6, 1, 0}, r1);
    const Tree b = train_cart(t.x, t.y, 2, twice, {6, 1, 0}, r2);
    CHECK(a == b);
}

TEST_CASE("split ties go to the lowest feature index") {
    // Features 0 and 1 are identical; both separate perfectly.
    Matrix x(4, 2);
    x << 0, 0, 1, 1, 2, 2, 3, 3;
    const std::vector<int> y{0, 0, 1, 1};
    std::vector<std::size_t> rows{0, 1, 2, 3};
    Rng rng(0);
    const Tree t = train_cart(x, y, 2, rows, {3, 1, 0}, rng);
    CHECK(t.nodes[0].feature == 0);
    CHECK(t.nodes[0].threshold == 1.5);
}

TEST_CASE("boosting: separable data") {
    const Tabular t = separable(200, 2, 3);
    BoostConfig cfg;
    cfg.n_rounds = 50;
    const TabularModel m = train_gradient_boosting(t.x, t.y, cfg);
    CHECK(m.loss_curve.size() == 51);
    CHECK(m.loss_curve.back() < 0.05);
    CHECK(accuracy(predict_tabular(m, t.x), t.y) == 1.0);
}

TEST_CASE("boosting: loss decreases every round for lr <= 0.1") {
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL}) {
        const Tabular t = noisy(300, seed);
        BoostConfig cfg;
        cfg.n_rounds = 60;
        const TabularModel m = train_gradient_boosting(t.x, t.y, cfg);
        CHECK(m.loss_curve.back() < m.loss_curve.front());
        for (std::size_t r = 1; r < m.loss_curve.size(); ++r) CHECK(m.loss_curve[r] <= m.loss_curve[r - 1] + 1e-15);
    }
}

TEST_CASE("boosting: loss keeps falling after the fit saturates") {
    const Tabular t = separable(200, 2, 3);
    BoostConfig cfg;
    cfg.n_rounds = 400;
    const TabularModel m = train_gradient_boosting(t.x, t.y, cfg);
    CHECK(m.loss_curve.back() < 1e-12);
    for (std::size_t r = 1; r < m.loss_curve.size(); ++r) CHECK(m.loss_curve[r] < m.loss_curve[r - 1]);
}

TEST_CASE("boosting: vanishing learning rate predicts the prior") {
    const Tabular t = noisy(100, 4);
    BoostConfig cfg;
    cfg.n_rounds = 1;
    cfg.learning_rate = 1e-9;
    const Matrix p = predict_tabular(train_gradient_boosting(t.x, t.y, cfg), t.x);
    const double prior = double(std::accumulate(t.y.begin(), t.y.end(), 0)) / double(t.y.size());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        CHECK(std::abs(p(i, 1) - prior) < 1e-6);
        CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
    }
}

TEST_CASE("baseline errors") {
    Matrix x = Matrix::Zero(4, 2);
    const std::vector<int> one{1, 1, 1, 1};
    CHECK_THROWS_AS(train_random_forest(x, one, {}), Error);
    CHECK_THROWS_AS(train_gradient_boosting(x, one, {}), Error);
    ForestConfig bad;
    bad.n_trees = 0;
    CHECK_THROWS_AS(train_random_forest(x, std::vector<int>{0, 1, 0, 1}, bad), Error);
    BoostConfig lr;
    lr.learning_rate = 1.5;
    CHECK_THROWS_AS(train_gradient_boosting(x, std::vector<int>{0, 1, 0, 1}, lr), Error);

    const Tabular t = separable(20, 1, 1);
    const TabularModel m = train_random_forest(t.x, t.y, {});
    CHECK_THROWS_AS(predict_tabular(m, Matrix::Zero(3, 5)), Error);
}

TEST_CASE("model serialisation round trip") {
    const Tabular t = noisy(100, 2);
    ForestConfig fc;
    fc.n_trees = 4;
    const TabularModel f = train_random_forest(t.x, t.y, fc);
    BoostConfig bc;
    bc.n_rounds = 5;
    const TabularModel b = train_gradient_boosting(t.x, t.y, bc);
    for (const auto* m : {&f, &b}) {
        const std::string bytes = encode_tabular_model(*m);
        const TabularModel back = decode_tabular_model(bytes);
        CHECK(encode_tabular_model(back) == bytes);
        CHECK(predict_tabular(back, t.x) == predict_tabular(*m, t.x));
        CHECK_THROWS_AS(decode_tabular_model(bytes.substr(0, bytes.size() - 3)), Error);
    }
    const auto dir = testing::scratch_dir("tabular_model");
    save_tabular_model(b, dir / "b.model");
    CHECK(load_tabular_model(dir / "b.model").loss_curve == b.loss_curve);
}
