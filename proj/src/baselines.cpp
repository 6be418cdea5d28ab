#include "cellgraph/baselines.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "cellgraph/error.hpp"
#include "cellgraph/io.hpp"
#include "cellgraph/parallel.hpp"

namespace cellgraph {

const std::vector<double>& Tree::leaf_value(const double* row) const {
    int i = 0;
    while (!nodes[std::size_t(i)].is_leaf()) {
        const TreeNode& n = nodes[std::size_t(i)];
        i = row[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[std::size_t(i)].value;
}

int Tree::depth() const {
    std::vector<int> d(nodes.size(), 0);
    int best = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        best = std::max(best, d[i]);
        if (!nodes[i].is_leaf()) {
            d[std::size_t(nodes[i].left)] = d[i] + 1;
            d[std::size_t(nodes[i].right)] = d[i] + 1;
        }
    }
    return best;
}

namespace {

double midpoint(double a, double b) {
    const double m = a + (b - a) / 2.0;
    return (m < b) ? m : a;
}

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

// Candidate features for one split, ascending.
std::vector<int> pick_features(int p, int k, Rng& rng) {
    std::vector<int> f(static_cast<std::size_t>(p));
    std::iota(f.begin(), f.end(), 0);
    if (k <= 0 || k >= p) return f;
    for (int i = 0; i < k; ++i) {
        const auto j = std::size_t(i) + std::size_t(rng.below(std::uint64_t(p - i)));
        std::swap(f[std::size_t(i)], f[j]);
    }
    f.resize(std::size_t(k));
    std::sort(f.begin(), f.end());
    return f;
}

// Scans every candidate feature; `score(left_stats, right_stats)` returns the
// impurity decrease for the partition, `add` moves one row into the left stats.
// `presorted`, if given, holds every row of x ordered by (value, row) per
// feature; the node's rows are then picked out in order instead of sorted.
template <class Stats, class Add, class Score>
Split best_split(const Matrix& x, const std::vector<std::size_t>& rows, const std::vector<int>& features, int min_leaf,
                 const Stats& total, Add add, Score score,
                 const std::vector<std::vector<std::uint32_t>>* presorted = nullptr, double tol = 1e-12) {
    Split best;
    const std::size_t n = rows.size();
    std::vector<std::pair<double, std::size_t>> sorted(n);
    std::vector<std::uint32_t> mult;
    if (presorted) {
        mult.assign(std::size_t(x.rows()), 0);
        for (std::size_t i : rows) ++mult[i];
    }
    for (int f : features) {
        if (presorted) {
            std::size_t k = 0;
            for (std::uint32_t i : (*presorted)[std::size_t(f)]) {
                for (std::uint32_t c = 0; c < mult[i]; ++c) sorted[k++] = {x(Eigen::Index(i), f), i};
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) sorted[i] = {x(Eigen::Index(rows[i]), f), rows[i]};
            std::sort(sorted.begin(), sorted.end());
        }
        Stats left{};
        left.init_like(total);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            add(left, sorted[i].second);
            const double v = sorted[i].first, next = sorted[i + 1].first;
            if (v == next) continue;
            if (i + 1 < std::size_t(min_leaf) || n - i - 1 < std::size_t(min_leaf)) continue;
            const double gain = score(left);
            if (gain > best.gain + tol) {
                best = {f, midpoint(v, next), gain};
            }
        }
    }
    return best;
}

struct ClassStats {
    std::vector<double> counts;
    double n = 0.0;
    void init_like(const ClassStats& o) { counts.assign(o.counts.size(), 0.0); }
};

double gini(const ClassStats& s) {
    if (s.n <= 0.0) return 0.0;
    double g = 1.0;
    for (double c : s.counts) g -= (c / s.n) * (c / s.n);
    return g;
}

struct RegStats {
    double sum_r = 0.0, sum_h = 0.0, n = 0.0;
    void init_like(const RegStats&) {}
};

// Generic greedy builder: `leaf` makes a leaf value, `split` finds a split.
template <class MakeLeaf, class FindSplit>
Tree grow(std::vector<std::size_t> root_rows, int max_depth, MakeLeaf leaf, FindSplit split) {
    Tree t;
    struct Pending {
        int node;
        int depth;
        std::vector<std::size_t> rows;
    };
    std::vector<Pending> stack;
    t.nodes.push_back({});
    stack.push_back({0, 0, std::move(root_rows)});
    // Depth-first, left child first; node ids follow creation order.
    while (!stack.empty()) {
        Pending cur = std::move(stack.back());
        stack.pop_back();
        Split s;
        if (cur.depth < max_depth) s = split(cur.rows);
        if (s.feature < 0) {
            t.nodes[std::size_t(cur.node)].value = leaf(cur.rows);
            continue;
        }
        TreeNode& node = t.nodes[std::size_t(cur.node)];
        node.feature = s.feature;
        node.threshold = s.threshold;
        node.left = int(t.nodes.size());
        node.right = int(t.nodes.size()) + 1;
        const int left_id = node.left, right_id = node.right;
        t.nodes.push_back({});
        t.nodes.push_back({});
        stack.push_back({right_id, cur.depth + 1, {}});
        stack.push_back({left_id, cur.depth + 1, {}});
        auto& rp = stack[stack.size() - 2].rows;
        auto& lp = stack.back().rows;
        // Row order is preserved within each child.
        for (std::size_t i : cur.rows) {
            (split.value(i, s.feature) <= s.threshold ? lp : rp).push_back(i);
        }
    }
    return t;
}

}  // namespace

// ---------------------------------------------------------------- CART

Tree train_cart(const Matrix& x, std::span<const int> y, int n_classes, std::span<const std::size_t> rows,
                const CartConfig& cfg, Rng& rng) {
    if (rows.empty()) throw Error("train_cart: no rows");
    if (cfg.min_leaf < 1 || cfg.max_depth < 0) throw Error("train_cart: invalid config");
    const int p = int(x.cols());

    auto stats_of = [&](const std::vector<std::size_t>& rs) {
        ClassStats s;
        s.counts.assign(std::size_t(n_classes), 0.0);
        for (std::size_t i : rs) s.counts[std::size_t(y[i])] += 1.0;
        s.n = double(rs.size());
        return s;
    };
    auto make_leaf = [&](const std::vector<std::size_t>& rs) {
        ClassStats s = stats_of(rs);
        for (double& c : s.counts) c /= s.n;
        return s.counts;
    };
    struct Finder {
        const Matrix& x;
        std::span<const int> y;
        int p, k, min_leaf;
        Rng& rng;
        decltype(stats_of)& stats;

        double value(std::size_t i, int f) const { return x(Eigen::Index(i), f); }
        Split operator()(std::vector<std::size_t>& rs) const {
            const ClassStats total = stats(rs);
            const double parent = gini(total);
            if (parent <= 0.0) return {};
            const auto features = pick_features(p, k, rng);
            return best_split(
                x, rs, features, min_leaf, total,
                [&](ClassStats& s, std::size_t i) {
                    s.counts[std::size_t(y[i])] += 1.0;
                    s.n += 1.0;
                },
                [&](const ClassStats& left) {
                    ClassStats right = total;
                    for (std::size_t c = 0; c < right.counts.size(); ++c) right.counts[c] -= left.counts[c];
                    right.n -= left.n;
                    return parent - (left.n * gini(left) + right.n * gini(right)) / total.n;
                });
        }
    };
    Finder finder{x, y, p, cfg.features_per_split, cfg.min_leaf, rng, stats_of};
    return grow(std::vector<std::size_t>(rows.begin(), rows.end()), cfg.max_depth, make_leaf, finder);
}

// ---------------------------------------------------------------- forest

namespace {

int check_xy(const Matrix& x, std::span<const int> y, const char* who) {
    if (x.rows() < 2) throw Error(std::string(who) + ": need at least two rows");
    if (std::size_t(x.rows()) != y.size()) throw Error(std::string(who) + ": feature and label row counts differ");
    if (!x.allFinite()) throw Error(std::string(who) + ": features contain non-finite values");
    int n_classes = 0;
    for (int v : y) {
        if (v < 0) throw Error(std::string(who) + ": labels must be non-negative");
        n_classes = std::max(n_classes, v + 1);
    }
    const bool single = std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; });
    if (single) throw Error(std::string(who) + ": y contains a single class");
    return std::max(n_classes, 2);
}

}  // namespace

void ForestConfig::check() const {
    if (n_trees < 1) throw Error("ForestConfig: n_trees must be >= 1");
    if (max_depth < 0) throw Error("ForestConfig: max_depth must be >= 0");
    if (min_leaf < 1) throw Error("ForestConfig: min_leaf must be >= 1");
    if (features_per_split < 0) throw Error("ForestConfig: features_per_split must be >= 0");
}

void BoostConfig::check() const {
    if (n_rounds < 1) throw Error("BoostConfig: n_rounds must be >= 1");
    if (max_depth < 0) throw Error("BoostConfig: max_depth must be >= 0");
    if (min_leaf < 1) throw Error("BoostConfig: min_leaf must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw Error("BoostConfig: learning_rate must be in (0, 1]");
}

TabularModel train_random_forest(const Matrix& x, std::span<const int> y, const ForestConfig& cfg) {
    cfg.check();
    const int n_classes = check_xy(x, y, "train_random_forest");
    const auto n = std::size_t(x.rows());
    const int p = int(x.cols());
    CartConfig cart{cfg.max_depth, cfg.min_leaf,
                    cfg.features_per_split > 0 ? cfg.features_per_split : int(std::ceil(std::sqrt(double(p))))};

    TabularModel m;
    m.kind = TabularKind::random_forest;
    m.n_features = p;
    m.n_classes = n_classes;
    m.trees.resize(std::size_t(cfg.n_trees));
    parallel_for(m.trees.size(), [&](std::size_t t) {
        Rng rng(derive_seed(cfg.seed, std::uint64_t(t)));
        std::vector<std::size_t> rows(n);
        if (cfg.bootstrap) {
            for (auto& r : rows) r = std::size_t(rng.below(n));
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        m.trees[t] = train_cart(x, y, n_classes, rows, cart, rng);
    });
    return m;
}

// ---------------------------------------------------------------- boosting

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double log_loss(std::span<const int> y, const std::vector<double>& score) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        // log(1 + e^z) - y z = softplus(z) for y = 0, softplus(-z) for y = 1.
        const double z = y[i] ? -score[i] : score[i];
        s += z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    }
    return s / double(y.size());
}

}  // namespace

TabularModel train_gradient_boosting(const Matrix& x, std::span<const int> y, const BoostConfig& cfg) {
    cfg.check();
    const int n_classes = check_xy(x, y, "train_gradient_boosting");
    if (n_classes != 2) throw Error("train_gradient_boosting: labels must be binary");
    const auto n = std::size_t(x.rows());

    TabularModel m;
    m.kind = TabularKind::gradient_boosting;
    m.n_features = int(x.cols());
    m.n_classes = 2;
    double pos = 0.0;
    for (int v : y) pos += v;
    const double prior = pos / double(n);
    m.base_score = std::log(prior / (1.0 - prior));

    std::vector<double> score(n, m.base_score), r(n), h(n);
    m.loss_curve.push_back(log_loss(y, score));
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    // Every round splits the same rows, so sort each feature once.
    std::vector<std::vector<std::uint32_t>> presorted(std::size_t(x.cols()));
    parallel_for(presorted.size(), [&](std::size_t f) {
        auto& order = presorted[f];
        order.resize(n);
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            const double va = x(Eigen::Index(a), Eigen::Index(f)), vb = x(Eigen::Index(b), Eigen::Index(f));
            return va != vb ? va < vb : a < b;
        });
    });

    for (int round = 0; round < cfg.n_rounds; ++round) {
        for (std::size_t i = 0; i < n; ++i) {
            // 1 - p taken as sigmoid(-s) so confident rows keep their residual.
            const double pi = sigmoid(score[i]), qi = sigmoid(-score[i]);
            r[i] = y[i] ? qi : -pi;
            h[i] = pi * qi;
        }
        auto stats_of = [&](const std::vector<std::size_t>& rs) {
            RegStats s;
            for (std::size_t i : rs) {
                s.sum_r += r[i];
                s.sum_h += h[i];
                s.n += 1.0;
            }
            return s;
        };
        auto make_leaf = [&](const std::vector<std::size_t>& rs) {
            const RegStats s = stats_of(rs);
            return std::vector<double>{s.sum_h > 0.0 ? cfg.learning_rate * s.sum_r / s.sum_h : 0.0};
        };
        struct Finder {
            const Matrix& x;
            const std::vector<double>& r;
            int p, min_leaf;
            decltype(stats_of)& stats;
            const std::vector<std::vector<std::uint32_t>>& presorted;

            double value(std::size_t i, int f) const { return x(Eigen::Index(i), f); }
            Split operator()(std::vector<std::size_t>& rs) const {
                const RegStats total = stats(rs);
                const double parent = total.sum_r * total.sum_r / total.n;
                // Gains are compared relative to the node's residual energy.
                double energy = 0.0;
                for (std::size_t i : rs) energy += r[i] * r[i];
                std::vector<int> features(static_cast<std::size_t>(p));
                std::iota(features.begin(), features.end(), 0);
                // Variance reduction = SSE decrease.
                return best_split(
                    x, rs, features, min_leaf, total,
                    [&](RegStats& s, std::size_t i) {
                        s.sum_r += r[i];
                        s.n += 1.0;
                    },
                    [&](const RegStats& left) {
                        const double rs_ = total.sum_r - left.sum_r, rn = total.n - left.n;
                        return left.sum_r * left.sum_r / left.n + rs_ * rs_ / rn - parent;
                    },
                    &presorted, 1e-12 * energy);
            }
        };
        Finder finder{x, r, int(x.cols()), cfg.min_leaf, stats_of, presorted};
        Tree t = grow(all, cfg.max_depth, make_leaf, finder);
        for (std::size_t i = 0; i < n; ++i) score[i] += t.leaf_value(&x(Eigen::Index(i), 0))[0];
        m.trees.push_back(std::move(t));
        m.loss_curve.push_back(log_loss(y, score));
    }
    return m;
}

Matrix predict_tabular(const TabularModel& model, const Matrix& x) {
    if (x.cols() != model.n_features) {
        throw Error("predict_tabular: model expects " + std::to_string(model.n_features) + " features, got " +
                    std::to_string(x.cols()));
    }
    if (model.trees.empty()) throw Error("predict_tabular: model has no trees");
    Matrix out = Matrix::Zero(x.rows(), model.n_classes);
    parallel_for(std::size_t(x.rows()), [&](std::size_t ui) {
        const auto i = Eigen::Index(ui);
        const double* row = &x(i, 0);
        if (model.kind == TabularKind::random_forest) {
            for (const auto& t : model.trees) {
                const auto& v = t.leaf_value(row);
                for (int c = 0; c < model.n_classes; ++c) out(i, c) += v[std::size_t(c)];
            }
            out.row(i) /= double(model.trees.size());
        } else {
            double s = model.base_score;
            for (const auto& t : model.trees) s += t.leaf_value(row)[0];
            const double p1 = sigmoid(s);
            out(i, 0) = 1.0 - p1;
            out(i, 1) = p1;
        }
    });
    return out;
}

// ---------------------------------------------------------------- serialisation

namespace {

static_assert(std::endian::native == std::endian::little, "model encoding assumes a little-endian host");
constexpr char kMagic[] = "CGTM1";

template <class T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

struct Reader {
    const std::string& s;
    std::size_t pos = 0;

    template <class T>
    T get() {
        if (pos + sizeof(T) > s.size()) throw Error("tabular model is truncated");
        T v;
        std::memcpy(&v, s.data() + pos, sizeof v);
        pos += sizeof v;
        return v;
    }
};

}  // namespace

std::string encode_tabular_model(const TabularModel& m) {
    std::string out(kMagic, 5);
    put(out, std::uint8_t(m.kind));
    put(out, std::uint32_t(m.n_features));
    put(out, std::uint32_t(m.n_classes));
    put(out, m.base_score);
    put(out, std::uint32_t(m.trees.size()));
    for (const auto& t : m.trees) {
        put(out, std::uint32_t(t.nodes.size()));
        for (const auto& nd : t.nodes) {
            put(out, std::int32_t(nd.feature));
            put(out, nd.threshold);
            put(out, std::int32_t(nd.left));
            put(out, std::int32_t(nd.right));
            put(out, std::uint32_t(nd.value.size()));
            for (double v : nd.value) put(out, v);
        }
    }
    put(out, std::uint32_t(m.loss_curve.size()));
    for (double v : m.loss_curve) put(out, v);
    return out;
}

TabularModel decode_tabular_model(const std::string& bytes) {
    if (bytes.size() < 5 || bytes.compare(0, 5, kMagic) != 0) throw Error("not a tabular model (bad magic)");
    Reader r{bytes, 5};
    TabularModel m;
    const auto kind = r.get<std::uint8_t>();
    if (kind != 1 && kind != 2) throw Error("tabular model has an unknown kind");
    m.kind = TabularKind(kind);
    m.n_features = int(r.get<std::uint32_t>());
    m.n_classes = int(r.get<std::uint32_t>());
    m.base_score = r.get<double>();
    const auto n_trees = r.get<std::uint32_t>();
    if (n_trees > bytes.size()) throw Error("tabular model is corrupt");
    m.trees.resize(n_trees);
    for (auto& t : m.trees) {
        const auto n_nodes = r.get<std::uint32_t>();
        if (n_nodes == 0 || n_nodes > bytes.size()) throw Error("tabular model is corrupt");
        t.nodes.resize(n_nodes);
        for (auto& nd : t.nodes) {
            nd.feature = r.get<std::int32_t>();
            nd.threshold = r.get<double>();
            nd.left = r.get<std::int32_t>();
            nd.right = r.get<std::int32_t>();
            const auto k = r.get<std::uint32_t>();
            if (k > bytes.size()) throw Error("tabular model is corrupt");
            nd.value.resize(k);
            for (auto& v : nd.value) v = r.get<double>();
        }
        for (const auto& nd : t.nodes) {
            if (nd.is_leaf()) continue;
            if (nd.feature >= m.n_features || nd.left <= 0 || nd.right <= 0 || nd.left >= int(n_nodes) ||
                nd.right >= int(n_nodes)) {
                throw Error("tabular model has an invalid node");
            }
        }
    }
    const auto n_loss = r.get<std::uint32_t>();
    if (n_loss > bytes.size()) throw Error("tabular model is corrupt");
    m.loss_curve.resize(n_loss);
    for (auto& v : m.loss_curve) v = r.get<double>();
    if (r.pos != bytes.size()) throw Error("tabular model has trailing bytes");
    return m;
}

void save_tabular_model(const TabularModel& model, const std::filesystem::path& path) {
    io::write_file_atomic(path, encode_tabular_model(model));
}

TabularModel load_tabular_model(const std::filesystem::path& path) {
    try {
        return decode_tabular_model(io::read_file(path));
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + ": " + path.string());
    }
}

}  // namespace cellgraph
