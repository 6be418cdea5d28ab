#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "cellgraph/dimred.hpp"
#include "cellgraph/error.hpp"
#include "cellgraph/random.hpp"

using namespace cellgraph;

namespace {

struct Clusters {
    Matrix x;
    std::vector<int> label;
};

// Three well-separated Gaussian clusters in `dim` dimensions.
Clusters three_clusters(std::size_t per, int dim, std::uint64_t seed) {
    Rng rng(seed);
    Clusters c;
    c.x.resize(Eigen::Index(3 * per), dim);
    for (int k = 0; k < 3; ++k) {
        Eigen::RowVectorXd centre(dim);
        for (int j = 0; j < dim; ++j) centre(j) = rng.normal(0.0, 10.0);
        for (std::size_t i = 0; i < per; ++i) {
            const auto r = Eigen::Index(std::size_t(k) * per + i);
            for (int j = 0; j < dim; ++j) c.x(r, j) = centre(j) + rng.normal();
            c.label.push_back(k);
        }
    }
    return c;
}

// Fraction of each point's 10 nearest embedding neighbours sharing its label.
double knn_purity(const Matrix& y, const std::vector<int>& label, int k = 10) {
    const Eigen::Index n = y.rows();
    double hits = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<std::pair<double, Eigen::Index>> d;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) d.push_back({(y.row(i) - y.row(j)).squaredNorm(), j});
        }
        std::sort(d.begin(), d.end());
        for (int t = 0; t < k; ++t) hits += label[std::size_t(d[std::size_t(t)].second)] == label[std::size_t(i)];
    }
    return hits / double(n * k);
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

}  // namespace

TEST_CASE("pca: collinear points have one axis") {
    Matrix x(5, 2);
    for (int i = 0; i < 5; ++i) x.row(i) << i, 2.0 * i;
    const PcaResult r = pca(x, 1);
    CHECK(r.explained_variance_ratio(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(r.components(0, 0) - 1.0 / std::sqrt(5.0)) < 1e-12);
}

TEST_CASE("pca: identical rows embed to zero") {
    Matrix x = Matrix::Constant(6, 3, 4.5);
    const PcaResult r = pca(x, 2);
    CHECK(r.embedding.coords.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pca: full-rank reconstruction and orthonormality") {
    const Matrix x = random_matrix(20, 5, 7);
    const PcaResult r = pca(x, 5);
    const Matrix back = (r.embedding.coords * r.components).rowwise() + r.mean.transpose();
    CHECK((back - x).cwiseAbs().maxCoeff() < 1e-9);
    const Matrix gram = r.components * r.components.transpose();
    CHECK((gram - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-9);
    for (int k = 1; k < 5; ++k) CHECK(r.explained_variance_ratio(k) <= r.explained_variance_ratio(k - 1));
    CHECK(r.explained_variance_ratio.sum() == doctest::Approx(1.0));
}

TEST_CASE("pca: variance of each score equals its eigenvalue share") {
    const Matrix x = random_matrix(50, 4, 8);
    const PcaResult r = pca(x, 2);
    const Matrix xc = x.rowwise() - x.colwise().mean();
    const double total = xc.squaredNorm();
    for (int k = 0; k < 2; ++k) {
        CHECK(r.embedding.coords.col(k).squaredNorm() / total ==
              doctest::Approx(r.explained_variance_ratio(k)).epsilon(1e-10));
    }
}

TEST_CASE("pca: bad d") {
    const Matrix x = random_matrix(4, 3, 1);
    CHECK_THROWS_AS(pca(x, 0), Error);
    CHECK_THROWS_AS(pca(x, 4), Error);
}

TEST_CASE("tsne: conditional rows are normalised at the requested perplexity") {
    const Matrix x = random_matrix(60, 5, 3);
    for (double perp : {2.0, 5.0, 15.0}) {
        const Matrix p = tsne_conditional_p(x, perp);
        for (Eigen::Index i = 0; i < p.rows(); ++i) {
            CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-9);
            CHECK(p(i, i) == 0.0);
            double h = 0.0;
            for (Eigen::Index j = 0; j < p.cols(); ++j) {
                if (p(i, j) > 0) h -= p(i, j) * std::log2(p(i, j));
            }
            CHECK(std::abs(std::exp2(h) - perp) < 1e-3);
        }
    }
}

TEST_CASE("tsne: joint P is symmetric, non-negative and sums to one") {
    const Matrix x = random_matrix(40, 3, 4);
    const Matrix p = tsne_joint_p(x, 8.0);
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(std::abs(p.sum() - 1.0) < 1e-9);
}

TEST_CASE("tsne: errors") {
    const Matrix x = random_matrix(12, 3, 4);
    CHECK_THROWS_AS(tsne_conditional_p(x, 4.0), Error);  // n/3 = 4
    CHECK_THROWS_AS(tsne_conditional_p(x, 0.5), Error);
    Matrix bad = x;
    bad(2, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(tsne_conditional_p(bad, 2.0), Error);
}

TEST_CASE("tsne: separates three clusters, KL decreases, deterministic") {
    const Clusters c = three_clusters(20, 50, 11);
    TsneConfig cfg;
    cfg.perplexity = 10.0;
    cfg.n_iters = 500;
    cfg.seed = 5;
    const TsneResult r = tsne(c.x, cfg);
    CHECK(r.embedding.coords.rows() == 60);
    CHECK(r.embedding.coords.cols() == 2);
    CHECK(knn_purity(r.embedding.coords, c.label) >= 0.9);
    CHECK(r.kl.back() < r.kl.front());
    const TsneResult again = tsne(c.x, cfg);
    CHECK(again.embedding.coords == r.embedding.coords);
}

TEST_CASE("tsne: KL decreases on unstructured input") {
    const Matrix x = random_matrix(15, 4, 21);
    TsneConfig cfg;
    cfg.perplexity = 3.0;
    cfg.n_iters = 300;
    const TsneResult r = tsne(x, cfg);
    CHECK(r.kl.back() < r.kl.front());
}

TEST_CASE("umap: fuzzy union") {
    CHECK(fuzzy_union(0.5, 0.5) == 0.75);
    CHECK(fuzzy_union(1.0, 0.3) == 1.0);
    CHECK(fuzzy_union(0.0, 0.3) == 0.3);
}

TEST_CASE("umap: two points have membership one") {
    Matrix x(2, 2);
    x << 0, 0, 3, 4;
    const auto m = umap_memberships(x, 1);
    REQUIRE(m[0].size() == 1);
    CHECK(m[0][0].w == 1.0);
    CHECK(m[1][0].w == 1.0);
}

TEST_CASE("umap: calibration hits log2(k) and graph is symmetric") {
    const Matrix x = random_matrix(50, 4, 13);
    const int k = 8;
    const auto m = umap_memberships(x, k);
    for (const auto& row : m) {
        double s = 0.0;
        for (const auto& e : row) {
            CHECK((e.w > 0.0 && e.w <= 1.0));
            s += e.w;
        }
        CHECK(std::abs(s - std::log2(double(k))) < 1e-4);
        CHECK(row.front().w == 1.0);  // nearest neighbour sits at rho
    }
    const auto g = umap_fuzzy_graph(x, k);
    Matrix dense = Matrix::Zero(50, 50);
    for (const auto& e : g) dense(e.i, e.j) = e.w;
    CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(dense.maxCoeff() <= 1.0);
    // Union against directed memberships.
    Matrix directed = Matrix::Zero(50, 50);
    for (const auto& row : m) {
        for (const auto& e : row) directed(e.i, e.j) = e.w;
    }
    const Matrix expect = directed + directed.transpose() - directed.cwiseProduct(directed.transpose());
    CHECK((dense - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("umap: (a, b) fit beats every point of a coarse grid") {
    const auto [a, b] = umap_fit_ab(1.0, 0.1);
    auto sse = [](double aa, double bb) {
        double s = 0.0;
        for (int t = 0; t < 300; ++t) {
            const double x = 3.0 * t / 299.0;
            const double y = x < 0.1 ? 1.0 : std::exp(-(x - 0.1));
            const double r = 1.0 / (1.0 + aa * std::pow(x, 2 * bb)) - y;
            s += r * r;
        }
        return s;
    };
    const double best = sse(a, b);
    for (double aa = 0.2; aa < 4.0; aa += 0.05) {
        for (double bb = 0.3; bb < 2.0; bb += 0.02) CHECK(best <= sse(aa, bb) + 1e-12);
    }
}

TEST_CASE("umap: identical inputs and bad neighbour counts are errors") {
    CHECK_THROWS_AS(umap_memberships(Matrix::Constant(5, 2, 1.0), 2), Error);
    CHECK_THROWS_AS(umap_memberships(random_matrix(5, 2, 1), 5), Error);
    CHECK_THROWS_AS(umap_memberships(random_matrix(5, 2, 1), 0), Error);
}

TEST_CASE("umap: separates three clusters and is deterministic") {
    const Clusters c = three_clusters(20, 50, 12);
    UmapConfig cfg;
    cfg.n_neighbors = 10;
    cfg.seed = 3;
    const Embedding e = umap(c.x, cfg);
    CHECK(knn_purity(e.coords, c.label) >= 0.9);
    CHECK(e.coords.allFinite());
    CHECK(umap(c.x, cfg).coords == e.coords);
}

TEST_CASE("reduce dispatch") {
    const Matrix x = random_matrix(30, 5, 2);
    ReductionConfig cfg;
    CHECK(reduce(x, cfg).coords == x);
    cfg.method = ReductionMethod::pca;
    CHECK(reduce(x, cfg).coords.cols() == 5);  // 16 capped at width
    cfg.dim = 3;
    CHECK(reduce(x, cfg).coords.cols() == 3);
    cfg.method = ReductionMethod::umap;
    cfg.umap.n_neighbors = 5;
    CHECK(reduce(x, cfg).coords.cols() == 3);
    CHECK(reduction_from_string("tsne") == ReductionMethod::tsne);
    CHECK_THROWS_AS(reduction_from_string("lda"), Error);
}
