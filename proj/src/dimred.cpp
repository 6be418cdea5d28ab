#include "cellgraph/dimred.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

#include "cellgraph/error.hpp"
#include "cellgraph/parallel.hpp"
#include "cellgraph/random.hpp"

namespace cellgraph {

namespace {

void require_finite(const Matrix& x, const char* who) {
    if (x.rows() == 0 || x.cols() == 0) throw Error(std::string(who) + ": empty input");
    if (!x.allFinite()) throw Error(std::string(who) + ": input contains non-finite values");
}

double sq_dist(const Matrix& x, Eigen::Index i, Eigen::Index j) { return (x.row(i) - x.row(j)).squaredNorm(); }

// PCA coordinates padded with small noise when fewer than d axes exist.
Matrix pca_init(const Matrix& x, int d, Rng& rng) {
    const Eigen::Index n = x.rows();
    const int r = int(std::min<Eigen::Index>({Eigen::Index(d), x.cols(), n}));
    Matrix y = Matrix::Zero(n, d);
    if (n >= 2) y.leftCols(r) = pca(x, r).embedding.coords;
    double scale = y.cwiseAbs().maxCoeff();
    if (!(scale > 0.0)) scale = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int c = 0; c < d; ++c) {
            if (c >= r || y(i, c) == 0.0) y(i, c) += 1e-4 * scale * rng.normal();
        }
    }
    return y;
}

}  // namespace

ReductionMethod reduction_from_string(const std::string& s) {
    if (s == "none") return ReductionMethod::none;
    if (s == "pca") return ReductionMethod::pca;
    if (s == "tsne") return ReductionMethod::tsne;
    if (s == "umap") return ReductionMethod::umap;
    throw Error("unknown reduction method '" + s + "' (expected none, pca, tsne or umap)");
}

std::string to_string(ReductionMethod m) {
    switch (m) {
        case ReductionMethod::none: return "none";
        case ReductionMethod::pca: return "pca";
        case ReductionMethod::tsne: return "tsne";
        case ReductionMethod::umap: return "umap";
    }
    return "none";
}

// ---------------------------------------------------------------- PCA

PcaResult pca(const Matrix& x, int d) {
    require_finite(x, "pca");
    const Eigen::Index n = x.rows(), p = x.cols();
    if (n < 2) throw Error("pca: need at least two rows");
    if (d < 1 || d > std::min(n, p)) {
        throw Error("pca: d=" + std::to_string(d) + " out of range [1, " + std::to_string(std::min(n, p)) + "]");
    }
    PcaResult res;
    res.mean = x.colwise().mean().transpose();
    const Matrix xc = x.rowwise() - res.mean.transpose();
    const Eigen::MatrixXd cov = (xc.transpose() * xc) / double(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw Error("pca: eigen decomposition failed");

    const Eigen::VectorXd& vals = es.eigenvalues();  // ascending
    double total = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) total += std::max(0.0, vals(k));

    res.components.resize(d, p);
    res.explained_variance_ratio.resize(d);
    for (int c = 0; c < d; ++c) {
        const Eigen::Index src = p - 1 - c;
        Eigen::VectorXd v = es.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        res.components.row(c) = v.transpose();
        res.explained_variance_ratio(c) = total > 0.0 ? std::max(0.0, vals(src)) / total : 0.0;
    }
    res.embedding.coords = xc * res.components.transpose();
    res.embedding.method = "pca";
    res.embedding.params = {{"dim", double(d)}};
    return res;
}

// ---------------------------------------------------------------- tSNE

Matrix tsne_conditional_p(const Matrix& x, double perplexity) {
    require_finite(x, "tsne");
    const Eigen::Index n = x.rows();
    if (n < 4) throw Error("tsne: need at least four points");
    if (!(perplexity >= 1.0) || !(perplexity < double(n) / 3.0)) {
        throw Error("tsne: perplexity " + std::to_string(perplexity) + " infeasible for n=" + std::to_string(n) +
                    " (need 1 <= perplexity < n/3)");
    }
    const double target = std::log(perplexity);
    Matrix p = Matrix::Zero(n, n);
    parallel_for(std::size_t(n), [&](std::size_t ui) {
        const auto i = Eigen::Index(ui);
        std::vector<double> d(static_cast<std::size_t>(n));
        double dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            d[std::size_t(j)] = sq_dist(x, i, j);
            if (j != i) dmin = std::min(dmin, d[std::size_t(j)]);
        }
        std::vector<double> row(static_cast<std::size_t>(n));
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 200; ++it) {
            double sum = 0.0, wsum = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) {
                    row[std::size_t(j)] = 0.0;
                    continue;
                }
                const double shifted = d[std::size_t(j)] - dmin;
                const double v = std::exp(-beta * shifted);
                row[std::size_t(j)] = v;
                sum += v;
                wsum += shifted * v;
            }
            const double h = std::log(sum) + beta * wsum / sum;
            const double diff = h - target;
            if (std::abs(diff) < 1e-10) break;
            if (diff > 0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        double sum = 0.0;
        for (double v : row) sum += v;
        for (Eigen::Index j = 0; j < n; ++j) p(i, j) = row[std::size_t(j)] / sum;
    });
    return p;
}

Matrix tsne_joint_p(const Matrix& x, double perplexity) {
    const Matrix c = tsne_conditional_p(x, perplexity);
    Matrix p = (c + c.transpose()) / (2.0 * double(x.rows()));
    return p;
}

TsneResult tsne(const Matrix& x, const TsneConfig& cfg) {
    if (cfg.dim < 1) throw Error("tsne: dim must be >= 1");
    if (cfg.n_iters < 0) throw Error("tsne: n_iters must be >= 0");
    const Matrix p = tsne_joint_p(x, cfg.perplexity);
    const Eigen::Index n = x.rows();
    const int d = cfg.dim;

    Rng rng(derive_seed(cfg.seed, "tsne-init"));
    Matrix y = pca_init(x, d, rng);
    {
        const double mean0 = y.col(0).mean();
        const double sd0 = std::sqrt((y.col(0).array() - mean0).square().sum() / double(n));
        y *= 1e-4 / (sd0 > 0.0 ? sd0 : 1.0);
    }

    Matrix update = Matrix::Zero(n, d);
    Matrix gains = Matrix::Ones(n, d);
    Matrix grad(n, d);
    std::vector<double> row_z(static_cast<std::size_t>(n)), row_kl(static_cast<std::size_t>(n));

    // sum_ij P log P, constant across iterations.
    double plogp = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        const double v = p.data()[i];
        if (v > 0.0) plogp += v * std::log(v);
    }

    TsneResult res;
    // Student-t kernel values, filled one triangle at a time and mirrored.
    Matrix num(n, n);
    auto step = [&](double exag, bool want_kl, bool want_grad) {
        const double* yd = y.data();
        double* nd = num.data();
        const auto un = std::size_t(n);
        parallel_for(un, [&](std::size_t i) {
            const double* yi = yd + i * std::size_t(d);
            double z = 0.0;
            nd[i * un + i] = 0.0;
            for (std::size_t j = i + 1; j < un; ++j) {
                const double* yj = yd + j * std::size_t(d);
                double s = 0.0;
                for (int c = 0; c < d; ++c) s += (yi[c] - yj[c]) * (yi[c] - yj[c]);
                const double q = 1.0 / (1.0 + s);
                nd[i * un + j] = q;
                nd[j * un + i] = q;
                z += q;
            }
            row_z[i] = 2.0 * z;
        });
        double z = 0.0;
        for (double v : row_z) z += v;
        const double inv_z = 1.0 / z;
        parallel_for(un, [&](std::size_t i) {
            const double* yi = yd + i * std::size_t(d);
            const double* pi = p.data() + i * un;
            const double* qi = nd + i * un;
            double* gi = grad.data() + i * std::size_t(d);
            if (want_grad) std::fill(gi, gi + d, 0.0);
            double cross = 0.0;
            for (std::size_t j = 0; j < un; ++j) {
                if (j == i) continue;
                if (want_kl && pi[j] > 0.0) cross += pi[j] * std::log(qi[j] * inv_z);
                if (want_grad) {
                    const double* yj = yd + j * std::size_t(d);
                    const double mult = 4.0 * (exag * pi[j] - qi[j] * inv_z) * qi[j];
                    for (int c = 0; c < d; ++c) gi[c] += mult * (yi[c] - yj[c]);
                }
            }
            row_kl[i] = cross;
        });
        double cross = 0.0;
        for (double v : row_kl) cross += v;
        return plogp - cross;
    };

    const int every = std::max(1, cfg.kl_every);
    for (int it = 0; it < cfg.n_iters; ++it) {
        const bool early = it < cfg.exaggeration_iters;
        const double exag = early ? cfg.early_exaggeration : 1.0;
        const double momentum = early ? 0.5 : 0.8;
        const bool log_kl = it % every == 0;
        const double kl = step(exag, log_kl, true);
        if (log_kl) {
            res.kl.push_back(kl);
            res.kl_iters.push_back(it);
        }
        for (Eigen::Index k = 0; k < y.size(); ++k) {
            double& gk = gains.data()[k];
            const double gr = grad.data()[k];
            double& up = update.data()[k];
            gk = ((gr > 0.0) != (up > 0.0)) ? gk + 0.2 : gk * 0.8;
            gk = std::max(gk, 0.01);
            up = momentum * up - cfg.learning_rate * gk * gr;
            y.data()[k] += up;
        }
        y.rowwise() -= y.colwise().mean();
    }
    res.kl.push_back(step(1.0, true, false));
    res.kl_iters.push_back(cfg.n_iters);

    if (!y.allFinite()) throw Error("tsne: optimisation diverged");
    res.embedding.coords = std::move(y);
    res.embedding.method = "tsne";
    res.embedding.params = {{"dim", double(d)},
                            {"perplexity", cfg.perplexity},
                            {"n_iters", double(cfg.n_iters)},
                            {"learning_rate", cfg.learning_rate},
                            {"early_exaggeration", cfg.early_exaggeration}};
    return res;
}

// ---------------------------------------------------------------- UMAP

double fuzzy_union(double a, double b) { return a + b - a * b; }

std::vector<std::vector<FuzzyEdge>> umap_memberships(const Matrix& x, int n_neighbors) {
    require_finite(x, "umap");
    const Eigen::Index n = x.rows();
    if (n < 2) throw Error("umap: need at least two points");
    if (n_neighbors < 1 || n_neighbors >= n) {
        throw Error("umap: n_neighbors=" + std::to_string(n_neighbors) + " out of range [1, " + std::to_string(n - 1) + "]");
    }
    bool identical = true;
    for (Eigen::Index i = 1; i < n && identical; ++i) identical = x.row(i) == x.row(0);
    if (identical) throw Error("umap: all input points are identical");

    const std::size_t k = std::size_t(n_neighbors);
    const double target = std::log2(double(k));
    std::vector<std::vector<FuzzyEdge>> out(static_cast<std::size_t>(n));

    parallel_for(std::size_t(n), [&](std::size_t ui) {
        const auto i = Eigen::Index(ui);
        std::vector<std::pair<double, std::uint32_t>> cand;
        cand.reserve(std::size_t(n - 1));
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) cand.push_back({std::sqrt(sq_dist(x, i, j)), std::uint32_t(j)});
        }
        std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(k), cand.end());
        cand.resize(k);

        double rho = 0.0, total = 0.0;
        for (const auto& c : cand) {
            total += c.first;
            if (rho == 0.0 && c.first > 0.0) rho = c.first;
        }

        double lo = 0.0, hi = std::numeric_limits<double>::infinity(), sigma = 1.0;
        for (int it = 0; it < 64; ++it) {
            double psum = 0.0;
            for (const auto& c : cand) psum += std::exp(-std::max(0.0, c.first - rho) / sigma);
            if (std::abs(psum - target) < 1e-5) break;
            if (psum > target) {
                hi = sigma;
                sigma = 0.5 * (lo + hi);
            } else {
                lo = sigma;
                sigma = std::isinf(hi) ? sigma * 2.0 : 0.5 * (lo + hi);
            }
        }
        if (rho > 0.0) sigma = std::max(sigma, 1e-3 * total / double(k));

        auto& row = out[ui];
        for (const auto& c : cand) {
            const double w = std::exp(-std::max(0.0, c.first - rho) / sigma);
            if (w > 0.0) row.push_back({std::uint32_t(i), c.second, w});  // drop underflow
        }
    });

    return out;
}

std::vector<FuzzyEdge> umap_fuzzy_graph(const Matrix& x, int n_neighbors) {
    auto rows = umap_memberships(x, n_neighbors);
    for (auto& r : rows) {
        std::sort(r.begin(), r.end(), [](const FuzzyEdge& a, const FuzzyEdge& b) { return a.j < b.j; });
    }
    auto lookup = [&](std::uint32_t i, std::uint32_t j) {
        const auto& r = rows[i];
        auto it = std::lower_bound(r.begin(), r.end(), j, [](const FuzzyEdge& e, std::uint32_t v) { return e.j < v; });
        return (it != r.end() && it->j == j) ? it->w : 0.0;
    };
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    for (const auto& r : rows) {
        for (const auto& e : r) pairs.push_back({std::min(e.i, e.j), std::max(e.i, e.j)});
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    std::vector<FuzzyEdge> g;
    g.reserve(2 * pairs.size());
    for (const auto& [a, b] : pairs) {
        const double w = fuzzy_union(lookup(a, b), lookup(b, a));
        if (w <= 0.0) continue;
        g.push_back({a, b, w});
        g.push_back({b, a, w});
    }
    std::sort(g.begin(), g.end(), [](const FuzzyEdge& p, const FuzzyEdge& q) { return p.i != q.i ? p.i < q.i : p.j < q.j; });
    return g;
}

std::pair<double, double> umap_fit_ab(double spread, double min_dist) {
    if (!(spread > 0.0) || !(min_dist >= 0.0) || min_dist > spread) {
        throw Error("umap: need spread > 0 and 0 <= min_dist <= spread");
    }
    constexpr int m = 300;
    std::vector<double> xs(m), ys(m);
    for (int t = 0; t < m; ++t) {
        xs[std::size_t(t)] = 3.0 * spread * double(t) / double(m - 1);
        ys[std::size_t(t)] = xs[std::size_t(t)] < min_dist ? 1.0 : std::exp(-(xs[std::size_t(t)] - min_dist) / spread);
    }
    auto sse = [&](double a, double b) {
        double s = 0.0;
        for (int t = 0; t < m; ++t) {
            const double r = 1.0 / (1.0 + a * std::pow(xs[std::size_t(t)], 2.0 * b)) - ys[std::size_t(t)];
            s += r * r;
        }
        return s;
    };

    // Levenberg-Marquardt on (a, b).
    double a = 1.0, b = 1.0, lambda = 1e-3;
    double cur = sse(a, b);
    for (int it = 0; it < 500; ++it) {
        Eigen::Matrix2d jtj = Eigen::Matrix2d::Zero();
        Eigen::Vector2d jtr = Eigen::Vector2d::Zero();
        for (int t = 0; t < m; ++t) {
            const double xv = xs[std::size_t(t)];
            const double x2b = xv > 0.0 ? std::pow(xv, 2.0 * b) : 0.0;
            const double den = 1.0 + a * x2b;
            const double r = 1.0 / den - ys[std::size_t(t)];
            Eigen::Vector2d jac;
            jac(0) = -x2b / (den * den);
            jac(1) = xv > 0.0 ? -a * x2b * 2.0 * std::log(xv) / (den * den) : 0.0;
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        bool improved = false;
        for (int tries = 0; tries < 30 && !improved; ++tries) {
            Eigen::Matrix2d lhs = jtj;
            lhs.diagonal() *= 1.0 + lambda;
            const Eigen::Vector2d step = lhs.ldlt().solve(-jtr);
            const double na = a + step(0), nb = b + step(1);
            const double cand = (na > 0.0 && nb > 0.0) ? sse(na, nb) : std::numeric_limits<double>::infinity();
            if (cand < cur) {
                const double gain = cur - cand;
                a = na;
                b = nb;
                cur = cand;
                lambda = std::max(lambda * 0.3, 1e-12);
                improved = true;
                if (gain < 1e-15 * std::max(1.0, cur)) return {a, b};
            } else {
                lambda *= 10.0;
            }
        }
        if (!improved) break;
    }
    return {a, b};
}

Embedding umap(const Matrix& x, const UmapConfig& cfg) {
    if (cfg.dim < 1) throw Error("umap: dim must be >= 1");
    if (cfg.n_epochs < 1) throw Error("umap: n_epochs must be >= 1");
    const auto graph = umap_fuzzy_graph(x, cfg.n_neighbors);
    const auto [a, b] = umap_fit_ab(cfg.spread, cfg.min_dist);
    const Eigen::Index n = x.rows();
    const int d = cfg.dim;

    Rng rng(derive_seed(cfg.seed, "umap"));
    Matrix y = pca_init(x, d, rng);
    {
        const double mx = y.cwiseAbs().maxCoeff();
        y *= 10.0 / (mx > 0.0 ? mx : 1.0);
    }

    double wmax = 0.0;
    for (const auto& e : graph) wmax = std::max(wmax, e.w);
    std::vector<const FuzzyEdge*> edges;
    std::vector<double> eps, next, eps_neg, next_neg;
    for (const auto& e : graph) {
        const double per = wmax / e.w;
        if (per > double(cfg.n_epochs)) continue;  // too weak to be sampled even once
        edges.push_back(&e);
        eps.push_back(per);
        next.push_back(per);
        eps_neg.push_back(per / double(cfg.negative_sample_rate));
        next_neg.push_back(per / double(cfg.negative_sample_rate));
    }

    auto clip = [](double v) { return std::clamp(v, -4.0, 4.0); };
    for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
        const double alpha = cfg.learning_rate * (1.0 - double(epoch) / double(cfg.n_epochs));
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (next[e] > double(epoch)) continue;
            const Eigen::Index j = edges[e]->i, k = edges[e]->j;
            double dist2 = sq_dist(y, j, k);
            double coeff = 0.0;
            if (dist2 > 0.0) {
                coeff = -2.0 * a * b * std::pow(dist2, b - 1.0) / (a * std::pow(dist2, b) + 1.0);
            }
            for (int c = 0; c < d; ++c) {
                const double g = clip(coeff * (y(j, c) - y(k, c)));
                y(j, c) += g * alpha;
                y(k, c) -= g * alpha;
            }
            next[e] += eps[e];

            const int n_neg = int((double(epoch) - next_neg[e]) / eps_neg[e]);
            for (int s = 0; s < n_neg; ++s) {
                const auto kk = Eigen::Index(rng.below(std::uint64_t(n)));
                if (kk == j) continue;
                dist2 = sq_dist(y, j, kk);
                coeff = dist2 > 0.0 ? 2.0 * b / ((0.001 + dist2) * (a * std::pow(dist2, b) + 1.0)) : 0.0;
                for (int c = 0; c < d; ++c) {
                    const double g = coeff > 0.0 ? clip(coeff * (y(j, c) - y(kk, c))) : 4.0;
                    y(j, c) += g * alpha;
                }
            }
            next_neg[e] += double(n_neg) * eps_neg[e];
        }
    }
    if (!y.allFinite()) throw Error("umap: optimisation diverged");

    Embedding emb;
    emb.coords = std::move(y);
    emb.method = "umap";
    emb.params = {{"dim", double(d)},       {"n_neighbors", double(cfg.n_neighbors)},
                  {"min_dist", cfg.min_dist}, {"n_epochs", double(cfg.n_epochs)},
                  {"a", a},                   {"b", b}};
    return emb;
}

// ---------------------------------------------------------------- dispatch

Embedding reduce(const Matrix& x, const ReductionConfig& cfg) {
    switch (cfg.method) {
        case ReductionMethod::none: {
            require_finite(x, "reduce");
            Embedding e;
            e.coords = x;
            e.method = "none";
            return e;
        }
        case ReductionMethod::pca: {
            const int d = int(std::min<Eigen::Index>({Eigen::Index(cfg.dim), x.cols(), x.rows()}));
            return pca(x, d).embedding;
        }
        case ReductionMethod::tsne: {
            TsneConfig t = cfg.tsne;
            t.seed = cfg.seed;
            return tsne(x, t).embedding;
        }
        case ReductionMethod::umap: {
            UmapConfig u = cfg.umap;
            u.dim = cfg.dim;
            u.seed = cfg.seed;
            return umap(x, u);
        }
    }
    throw Error("reduce: unknown method");
}

}  // namespace cellgraph
